#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "catcd/config.hpp"
#include "catcd/data.hpp"
#include "catcd/model.hpp"
#include "catcd/training.hpp"

namespace catcd::run {

/// A network together with the parameter set that owns its tensors.
template <typename T>
struct Network {
  ParamSet<T> params;
  CATNet<T> net;

  explicit Network(const ModelConfig& config, std::uint64_t seed);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
};

struct EvalResult {
  train::ConfusionCounts counts;
  train::Metrics metrics;
  /// Mean cluster ratio after the first cross-attention of each scale over the
  /// samples where both classes are present; NaN when none is.
  std::array<double, 3> diag_ratio{};
};

/// Inference-mode pass over `samples` in batches of `batch_size`. threads > 1
/// evaluates whole batches concurrently; the result does not depend on it.
template <typename T>
EvalResult evaluate(const CATNet<T>& net, std::span<const data::LoadedSample> samples,
                    std::size_t batch_size, unsigned threads = 1);

/// Cluster statistics of one sample at one scale, for the tokens entering the
/// first CAT block, after its cross-attention and after its self-attention.
struct SampleDiagnostic {
  std::size_t sample = 0;
  std::size_t scale = 0;  // 1..3
  train::ClusterStats input, cross, self;
};

template <typename T>
std::vector<SampleDiagnostic> diagnose(const CATNet<T>& net,
                                       std::span<const data::LoadedSample> samples,
                                       unsigned threads = 1);

struct TrainOptions {
  /// Receives last.catw, best.catw, config.txt, train_log.csv and val_log.csv.
  /// Empty keeps everything in memory.
  std::filesystem::path out;
  /// Continue from out/last.catw.
  bool resume = false;
  /// Stop after this many epochs in this call (0 runs to the configured end).
  std::size_t stop_after = 0;
  /// Return after this many optimizer steps in this call, mid-epoch and
  /// without evaluating or saving (0 = no limit).
  std::size_t max_steps = 0;
  unsigned eval_threads = 1;
  std::ostream* log = nullptr;  // human-readable progress
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0;
  double lr = 0;
  EvalResult val;
};

struct TrainResult {
  std::vector<double> step_losses;  // this call only
  std::vector<EpochRecord> epochs;  // this call only
  double best_f1 = -1;
  std::size_t best_epoch = 0;
  std::size_t epochs_done = 0;  // including resumed ones
};

/// Trains with the deep-supervision loss, AdamW and per-epoch linear decay.
/// Initialization and the per-epoch sample order depend only on config.seed,
/// so a resumed run replays the uninterrupted one.
template <typename T>
TrainResult train_model(Network<T>& network, const RunConfig& config,
                        std::span<const data::LoadedSample> train_set,
                        std::span<const data::LoadedSample> val_set, const TrainOptions& options);

/// Sample order for one epoch: a Fisher-Yates shuffle seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

/// Restores parameters and buffers from a checkpoint; optimizer entries are
/// ignored. Throws data::CheckpointMismatch listing every shape difference.
template <typename T>
void load_weights(Network<T>& network, const std::filesystem::path& checkpoint);

}  // namespace catcd::run

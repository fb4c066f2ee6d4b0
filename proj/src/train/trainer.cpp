#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <thread>

#include "catcd/checkpoint.hpp"
#include "catcd/trainer.hpp"

namespace catcd::run {

namespace fs = std::filesystem;

namespace {

constexpr const char* kProgress = "opt.progress";

// Runs fn(first, last) over contiguous chunks of [0, n) on up to `threads` threads.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn fn) {
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          fn(n * w / workers, n * (w + 1) / workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Forward passes over `samples` in fixed batches of `batch_size`, spread over
// up to `threads` threads by whole batches, so the batch composition (and with
// it every floating-point result) is the same for any thread count.
template <typename T, typename Fn>
void for_each_batch(const CATNet<T>& net, std::span<const data::LoadedSample> samples,
                    std::size_t batch_size, unsigned threads, Fn fn) {
  const std::size_t batches = (samples.size() + batch_size - 1) / batch_size;
  parallel_chunks(batches, threads, [&](std::size_t first, std::size_t last) {
    NoGradScope no_grad;
    std::vector<std::size_t> idx;
    for (std::size_t k = first; k < last; ++k) {
      idx.clear();
      for (std::size_t i = k * batch_size; i < std::min(samples.size(), (k + 1) * batch_size); ++i) {
        idx.push_back(i);
      }
      const auto batch = data::make_batch(samples, idx);
      const auto out =
          net(data::cast<T>(batch.t1), data::cast<T>(batch.t2), nn::Mode::inference());
      fn(k * batch_size, batch, out);
    }
  });
}

template <typename T>
std::vector<Parameter<T>> weights_and_state(const Network<T>& network,
                                            const train::AdamW<T>* opt, std::size_t epochs_done,
                                            T best_f1, std::size_t best_epoch) {
  auto tensors = data::collect(network.params);
  if (opt) {
    auto state = opt->state();
    tensors.insert(tensors.end(), state.begin(), state.end());
    tensors.push_back({kProgress, Tensor<T>(Shape{3}, std::vector<T>{static_cast<T>(epochs_done),
                                                                      best_f1,
                                                                      static_cast<T>(best_epoch)})});
  }
  return tensors;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

template <typename T>
Network<T>::Network(const ModelConfig& config, std::uint64_t seed)
    : net([&] {
        nn::Rng rng(seed);
        return CATNet<T>::create(params, config, rng);
      }()) {}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

template <typename T>
EvalResult evaluate(const CATNet<T>& net, std::span<const data::LoadedSample> samples,
                    std::size_t batch_size, unsigned threads) {
  const std::size_t n = samples.size();
  std::vector<train::ConfusionCounts> counts(n);
  std::vector<std::array<double, 3>> ratios(n);
  for_each_batch(net, samples, batch_size, threads,
                 [&](std::size_t start, const data::Batch& batch, const ModelOutput<T>& out) {
                   const auto pred = train::predict_labels(out.logits);
                   for (std::size_t b = 0; b < batch.label.batch(); ++b) {
                     counts[start + b] = train::confusion(pred.sample(b), batch.label.sample(b));
                   }
                   for (std::size_t s = 0; s < 3; ++s) {
                     const auto& blocks = out.scales[s].blocks;
                     const bool have = !blocks.empty() && blocks[0].cross_tokens.defined();
                     const auto label = train::downsample_label(batch.label, std::size_t{4} << s);
                     for (std::size_t b = 0; b < batch.label.batch(); ++b) {
                       double r = std::numeric_limits<double>::quiet_NaN();
                       if (have) {
                         const auto st =
                             train::cluster_diagnostic_tokens(blocks[0].cross_tokens, label, b);
                         if (st.valid && std::isfinite(st.ratio)) r = st.ratio;
                       }
                       ratios[start + b][s] = r;
                     }
                   }
                 });
  EvalResult result;
  for (const auto& c : counts) result.counts += c;
  result.metrics = train::compute_metrics(result.counts);
  for (std::size_t s = 0; s < 3; ++s) {
    double sum = 0;
    std::size_t k = 0;
    for (const auto& r : ratios) {
      if (std::isnan(r[s])) continue;
      sum += r[s];
      ++k;
    }
    result.diag_ratio[s] = k ? sum / static_cast<double>(k) : std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

template <typename T>
std::vector<SampleDiagnostic> diagnose(const CATNet<T>& net,
                                       std::span<const data::LoadedSample> samples,
                                       unsigned threads) {
  const std::size_t n = samples.size();
  std::vector<SampleDiagnostic> rows(3 * n);
  for_each_batch(net, samples, 8, threads,
                 [&](std::size_t start, const data::Batch& batch, const ModelOutput<T>& out) {
                   for (std::size_t s = 0; s < 3; ++s) {
                     const auto label = train::downsample_label(batch.label, std::size_t{4} << s);
                     const auto& blocks = out.scales[s].blocks;
                     for (std::size_t b = 0; b < batch.label.batch(); ++b) {
                       auto& row = rows[(start + b) * 3 + s];
                       row.sample = start + b;
                       row.scale = s + 1;
                       if (blocks.empty()) continue;
                       const auto& blk = blocks[0];
                       row.input = train::cluster_diagnostic_tokens(blk.input_tokens, label, b);
                       if (blk.cross_tokens.defined()) {
                         row.cross = train::cluster_diagnostic_tokens(blk.cross_tokens, label, b);
                       }
                       if (blk.self_tokens.defined()) {
                         row.self = train::cluster_diagnostic_tokens(blk.self_tokens, label, b);
                       }
                     }
                   }
                 });
  return rows;
}

template <typename T>
void load_weights(Network<T>& network, const fs::path& checkpoint) {
  const auto tensors = data::load_checkpoint<T>(checkpoint);
  data::restore<T>(network.params, tensors);
}

template <typename T>
TrainResult train_model(Network<T>& network, const RunConfig& config,
                        std::span<const data::LoadedSample> train_set,
                        std::span<const data::LoadedSample> val_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (train_set.front().label.height() != config.image_size) {
    throw std::invalid_argument("train: samples are " +
                                std::to_string(train_set.front().label.height()) +
                                " px but image_size is " + std::to_string(config.image_size));
  }
  train::AdamW<T> opt(network.params, {config.lr, config.weight_decay});
  TrainResult result;
  T best_f1 = T(-1);

  if (options.resume) {
    const auto tensors = data::load_checkpoint<T>(options.out / "last.catw");
    data::restore<T>(network.params, tensors);
    opt.load_state(tensors);
    const auto it = std::find_if(tensors.begin(), tensors.end(),
                                 [](const Parameter<T>& p) { return p.name == kProgress; });
    if (it == tensors.end() || it->value.numel() != 3) {
      throw data::FormatError("resume: last.catw has no training progress record");
    }
    result.epochs_done = static_cast<std::size_t>(it->value.data()[0]);
    best_f1 = it->value.data()[1];
    result.best_epoch = static_cast<std::size_t>(it->value.data()[2]);
  }

  std::ofstream step_log, val_log;
  if (!options.out.empty()) {
    fs::create_directories(options.out);
    config.save(options.out / "config.txt");
    const auto mode = options.resume ? std::ios::app : std::ios::trunc;
    step_log.open(options.out / "train_log.csv", mode);
    val_log.open(options.out / "val_log.csv", mode);
    if (!step_log || !val_log) throw data::FormatError("cannot write logs in " + options.out.string());
    if (!options.resume) {
      step_log << "epoch,step,loss,lr\n";
      val_log << "epoch,val_precision,val_recall,val_f1,diag_ratio_s1,diag_ratio_s2,diag_ratio_s3\n";
    }
  }

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  std::size_t ran = 0;
  for (std::size_t epoch = result.epochs_done; epoch < config.epochs; ++epoch) {
    if (options.stop_after && ran == options.stop_after) break;
    const double lr = train::linear_decay_lr(config.lr, epoch, config.epochs);
    const auto order = epoch_order(config.seed, epoch, n);
    double loss_sum = 0;
    for (std::size_t k = 0; k < steps_per_epoch; ++k) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(k * config.batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(n, (k + 1) * config.batch_size));
      const std::vector<std::size_t> idx(first, last);
      const auto batch = data::make_batch(train_set, idx);
      double value = 0;
      {
        Tape tape;
        TapeScope scope(tape);
        const auto out = network.net(data::cast<T>(batch.t1), data::cast<T>(batch.t2),
                                     nn::Mode::training());
        const auto loss = train::full_loss<T>(out.logits, out.masks, batch.label, config.lambda,
                                              config.label_pooling);
        check_finite(loss.total, "training loss");
        value = static_cast<double>(loss.total.item());
        backward(loss.total, tape);
      }
      opt.step(lr);
      network.params.zero_grad();
      result.step_losses.push_back(value);
      loss_sum += value;
      if (step_log.is_open()) {
        step_log << epoch + 1 << ',' << epoch * steps_per_epoch + k + 1 << ',' << csv_number(value)
                 << ',' << csv_number(lr) << '\n';
      }
      if (options.max_steps && result.step_losses.size() == options.max_steps) {
        result.best_f1 = static_cast<double>(best_f1);
        return result;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.lr = lr;
    if (!val_set.empty()) {
      rec.val = evaluate(network.net, val_set, config.batch_size, options.eval_threads);
    }
    result.epochs.push_back(rec);
    result.epochs_done = epoch + 1;
    ++ran;

    const T f1 = static_cast<T>(rec.val.metrics.f1);
    const bool improved = f1 > best_f1;
    if (improved) {
      best_f1 = f1;
      result.best_epoch = epoch + 1;
    }
    if (!options.out.empty()) {
      if (improved) {
        data::save_checkpoint<T>(weights_and_state<T>(network, nullptr, 0, 0, 0),
                                 options.out / "best.catw");
      }
      data::save_checkpoint<T>(
          weights_and_state<T>(network, &opt, result.epochs_done, best_f1, result.best_epoch),
          options.out / "last.catw");
      const auto& m = rec.val.metrics;
      val_log << rec.epoch << ',' << csv_number(m.precision) << ',' << csv_number(m.recall) << ','
              << csv_number(m.f1) << ',' << csv_number(rec.val.diag_ratio[0]) << ','
              << csv_number(rec.val.diag_ratio[1]) << ',' << csv_number(rec.val.diag_ratio[2])
              << '\n';
      step_log.flush();
      val_log.flush();
    }
    if (options.log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %zu/%zu  loss %.4f  lr %.2e  val P %.4f R %.4f F1 %.4f%s\n",
                    rec.epoch, config.epochs, rec.mean_loss, lr, rec.val.metrics.precision,
                    rec.val.metrics.recall, rec.val.metrics.f1, improved ? "  *" : "");
      *options.log << line << std::flush;
    }
  }
  result.best_f1 = static_cast<double>(best_f1);
  return result;
}

#define CATCD_TRAINER(T)                                                                          \
  template struct Network<T>;                                                                     \
  template EvalResult evaluate(const CATNet<T>&, std::span<const data::LoadedSample>,             \
                               std::size_t, unsigned);                                            \
  template std::vector<SampleDiagnostic> diagnose(const CATNet<T>&,                               \
                                                  std::span<const data::LoadedSample>, unsigned); \
  template void load_weights(Network<T>&, const fs::path&);                                       \
  template TrainResult train_model(Network<T>&, const RunConfig&,                                 \
                                   std::span<const data::LoadedSample>,                           \
                                   std::span<const data::LoadedSample>, const TrainOptions&);

CATCD_TRAINER(float)
CATCD_TRAINER(double)

}  // namespace catcd::run

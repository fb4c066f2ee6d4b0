#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "catcd/tensor.hpp"
#include "catcd/training.hpp"

namespace catcd::data {

/// Malformed or unreadable input file (image, manifest, checkpoint).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- netpbm images ----------------------------------------------------------------

/// 8-bit image, interleaved H x W x C (C = 1 or 3), as stored in P5 / P6.
struct Image {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c)
      : width(w), height(h), channels(c), pixels(w * h * c, 0) {}
  bool operator==(const Image&) const = default;
};

Image read_netpbm(const std::filesystem::path& path);
Image parse_netpbm(std::span<const std::uint8_t> bytes);
/// P5 for one channel, P6 for three. Written to a temp file, then renamed.
void write_netpbm(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_netpbm(const Image& image);

/// 1 x C x H x W with values / 255.
Tensor<float> image_to_tensor(const Image& image);
/// First sample of a B x C x H x W map in [0, 1], rounded to 8 bits.
template <typename T>
Image tensor_to_image(const Tensor<T>& map);

/// Label PGM {0, 255} -> 1 x H x W map of {0, 1}. Other values are rejected.
train::LabelMap image_to_label(const Image& image);
Image label_to_image(const train::LabelMap& label, std::size_t b = 0);

// ---- synthetic scenes ---------------------------------------------------------------

struct SceneSpec {
  std::size_t size = 64;
  std::uint64_t seed = 7;
  std::size_t min_changes = 1;
  std::size_t max_changes = 4;
  std::size_t persistent_shapes = 3;  // present in both images
  std::size_t min_extent = 4;         // change shape side range, pixels
  std::size_t max_extent = 20;
  std::size_t border = 2;
  double brightness = 0.15;  // max |global shift| applied to t2
  double noise = 0.05;       // max per-pixel noise sigma applied to t2
  double drift = 0.04;       // max texture phase drift in t2, in cycles
  double min_fraction = 0.005;
  double max_fraction = 0.35;

  /// Throws std::invalid_argument on inconsistent bounds.
  void validate() const;
};

struct Shape2D {
  bool ellipse = false;
  std::size_t x0 = 0, y0 = 0, w = 0, h = 0;  // bounding box
  float color[3] = {0, 0, 0};

  bool covers(std::size_t x, std::size_t y) const;
};

/// Everything needed to render one bi-temporal pair.
struct SceneLayout {
  float base[3] = {0.5f, 0.5f, 0.5f};
  struct Wave {
    float fx, fy, phase, amp[3];
  };
  std::vector<Wave> texture;
  std::vector<Shape2D> persistent;
  std::vector<Shape2D> added;    // only in t2
  std::vector<Shape2D> removed;  // only in t1
  float brightness_shift = 0;
  float noise_sigma = 0;
  float drift_phase = 0;  // phase offset of every texture wave in t2, radians
  std::uint64_t noise_seed = 0;
};

struct Sample {
  Image t1, t2, label;  // label is a one-channel {0, 255} image
};

/// Random layout for sample `index`; a pure function of (spec, index).
SceneLayout sample_layout(const SceneSpec& spec, std::uint64_t index);
Sample render(const SceneSpec& spec, const SceneLayout& layout);
Sample generate_sample(const SceneSpec& spec, std::uint64_t index);

struct SplitStats {
  std::size_t count = 0;
  double min_fraction = 0, mean_fraction = 0, max_fraction = 0;
};

struct GeneratedDataset {
  SplitStats train, val;
};

/// Writes <out>/train/NNNNN_{t1,t2,label}.p?m, the same under val/, plus
/// train.txt and val.txt. Train samples use indices [0, n_train), val samples
/// [n_train, n_train + n_val). threads > 1 renders samples in parallel.
GeneratedDataset generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_val,
                                  const std::filesystem::path& out, unsigned threads = 1);

// ---- manifests and batches ------------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path t1, t2, label;  // resolved against the manifest's directory
};

/// One `t1<TAB>t2<TAB>label` per line; blank lines ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

struct LoadedSample {
  Tensor<float> t1, t2;  // 1 x 3 x H x W
  train::LabelMap label;  // 1 x H x W
};

LoadedSample to_loaded(const Sample& sample);

/// Loads every entry; all samples must share one size.
std::vector<LoadedSample> load_samples(std::span<const ManifestEntry> entries);

struct Batch {
  Tensor<float> t1, t2;  // B x 3 x H x W
  train::LabelMap label;
};

Batch make_batch(std::span<const LoadedSample> samples, std::span<const std::size_t> indices);

template <typename T>
Tensor<T> cast(const Tensor<float>& t);

}  // namespace catcd::data

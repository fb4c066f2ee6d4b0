#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "catcd/data.hpp"

namespace catcd::data {

namespace fs = std::filesystem;

namespace {

// Draws built directly on mt19937_64 output so a dataset is identical across
// standard libraries (the <random> distributions are implementation-defined).
class SampleRng {
 public:
  SampleRng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    engine_.seed(seq);
  }
  explicit SampleRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t integer(std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(engine_() % (hi - lo + 1));
  }
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

Shape2D random_shape(SampleRng& rng, const SceneSpec& spec, std::size_t margin) {
  Shape2D s;
  s.ellipse = rng.uniform() < 0.5;
  const std::size_t room = spec.size - 2 * margin;
  const std::size_t hi = std::min(spec.max_extent, room);
  s.w = rng.integer(spec.min_extent, hi);
  s.h = rng.integer(spec.min_extent, hi);
  s.x0 = rng.integer(margin, spec.size - margin - s.w);
  s.y0 = rng.integer(margin, spec.size - margin - s.h);
  for (float& c : s.color) c = static_cast<float>(rng.uniform());
  return s;
}

double change_fraction(const SceneSpec& spec, const SceneLayout& layout) {
  std::size_t covered = 0;
  for (std::size_t y = 0; y < spec.size; ++y) {
    for (std::size_t x = 0; x < spec.size; ++x) {
      const auto hit = [&](const Shape2D& s) { return s.covers(x, y); };
      if (std::any_of(layout.added.begin(), layout.added.end(), hit) ||
          std::any_of(layout.removed.begin(), layout.removed.end(), hit)) {
        ++covered;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(spec.size * spec.size);
}

void paint(std::vector<float>& img, std::size_t size, const Shape2D& s) {
  for (std::size_t y = s.y0; y < s.y0 + s.h; ++y) {
    for (std::size_t x = s.x0; x < s.x0 + s.w; ++x) {
      if (!s.covers(x, y)) continue;
      for (std::size_t k = 0; k < 3; ++k) img[(y * size + x) * 3 + k] = s.color[k];
    }
  }
}

std::vector<float> background(std::size_t size, const SceneLayout& layout, float phase_offset) {
  std::vector<float> img(size * size * 3);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t k = 0; k < 3; ++k) {
        float v = layout.base[k];
        for (const auto& w : layout.texture) {
          v += w.amp[k] * std::sin(w.fx * static_cast<float>(x) + w.fy * static_cast<float>(y) +
                                   w.phase + phase_offset);
        }
        img[(y * size + x) * 3 + k] = v;
      }
    }
  }
  return img;
}

Image quantize(const std::vector<float>& img, std::size_t size) {
  Image out(size, size, 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace

bool Shape2D::covers(std::size_t x, std::size_t y) const {
  if (x < x0 || y < y0 || x >= x0 + w || y >= y0 + h) return false;
  if (!ellipse) return true;
  const double cx = static_cast<double>(x0) + static_cast<double>(w) / 2.0;
  const double cy = static_cast<double>(y0) + static_cast<double>(h) / 2.0;
  const double dx = (static_cast<double>(x) + 0.5 - cx) / (static_cast<double>(w) / 2.0);
  const double dy = (static_cast<double>(y) + 0.5 - cy) / (static_cast<double>(h) / 2.0);
  return dx * dx + dy * dy <= 1.0;
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("scene spec: " + why); };
  if (size < 16) fail("size must be at least 16");
  if (min_changes > max_changes) fail("min_changes > max_changes");
  if (min_extent == 0 || min_extent > max_extent) fail("bad extent range");
  if (2 * border + min_extent > size) fail("shapes do not fit inside the border");
  if (brightness < 0 || brightness > 0.15) fail("brightness must be in [0, 0.15]");
  if (noise < 0 || noise > 0.05) fail("noise must be in [0, 0.05]");
  if (drift < 0) fail("drift must be >= 0");
  if (min_fraction < 0 || min_fraction > max_fraction || max_fraction > 1) {
    fail("bad change-fraction range");
  }
}

SceneLayout sample_layout(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  SampleRng rng(spec.seed, index);
  SceneLayout layout;
  for (float& c : layout.base) c = static_cast<float>(rng.uniform(0.25, 0.75));
  for (int i = 0; i < 3; ++i) {
    SceneLayout::Wave w{};
    w.fx = static_cast<float>(rng.uniform(0.05, 0.6));
    w.fy = static_cast<float>(rng.uniform(0.05, 0.6));
    w.phase = static_cast<float>(rng.uniform(0.0, 2.0 * std::numbers::pi));
    for (float& a : w.amp) a = static_cast<float>(rng.uniform(0.0, 0.05));
    layout.texture.push_back(w);
  }
  for (std::size_t i = 0; i < spec.persistent_shapes; ++i) {
    layout.persistent.push_back(random_shape(rng, spec, 0));
  }

  const std::size_t changes = rng.integer(spec.min_changes, spec.max_changes);
  for (int attempt = 0;; ++attempt) {
    layout.added.clear();
    layout.removed.clear();
    for (std::size_t i = 0; i < changes; ++i) {
      Shape2D s = random_shape(rng, spec, spec.border);
      // keep the change visible against the background colour
      for (int t = 0; t < 64; ++t) {
        double diff = 0;
        for (int k = 0; k < 3; ++k) diff += std::abs(s.color[k] - layout.base[k]);
        if (diff / 3.0 >= 0.25) break;
        for (float& c : s.color) c = static_cast<float>(rng.uniform());
      }
      (rng.uniform() < 0.5 ? layout.added : layout.removed).push_back(s);
    }
    if (changes == 0) break;
    const double f = change_fraction(spec, layout);
    if (f >= spec.min_fraction && f <= spec.max_fraction) break;
    if (attempt == 10000) {
      throw std::invalid_argument("scene spec: cannot reach the change-fraction range");
    }
  }

  layout.brightness_shift = static_cast<float>(rng.uniform(-spec.brightness, spec.brightness));
  layout.noise_sigma = static_cast<float>(rng.uniform(0.0, spec.noise));
  layout.drift_phase =
      static_cast<float>(rng.uniform(-spec.drift, spec.drift) * 2.0 * std::numbers::pi);
  layout.noise_seed = rng.bits();
  return layout;
}

Sample render(const SceneSpec& spec, const SceneLayout& layout) {
  const std::size_t n = spec.size;
  auto t1 = background(n, layout, 0.0f);
  auto t2 = background(n, layout, layout.drift_phase);
  for (const auto& s : layout.persistent) {
    paint(t1, n, s);
    paint(t2, n, s);
  }
  for (const auto& s : layout.removed) paint(t1, n, s);
  for (const auto& s : layout.added) paint(t2, n, s);

  SampleRng noise(layout.noise_seed);
  for (float& v : t2) {
    v += layout.brightness_shift + layout.noise_sigma * static_cast<float>(noise.normal());
  }

  Sample out{quantize(t1, n), quantize(t2, n), Image(n, n, 1)};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const auto hit = [&](const Shape2D& s) { return s.covers(x, y); };
      if (std::any_of(layout.added.begin(), layout.added.end(), hit) ||
          std::any_of(layout.removed.begin(), layout.removed.end(), hit)) {
        out.label.pixels[y * n + x] = 255;
      }
    }
  }
  return out;
}

Sample generate_sample(const SceneSpec& spec, std::uint64_t index) {
  return render(spec, sample_layout(spec, index));
}

GeneratedDataset generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_val,
                                  const fs::path& out, unsigned threads) {
  spec.validate();
  GeneratedDataset result;
  struct Split {
    const char* name;
    std::size_t first, count;
    SplitStats* stats;
  };
  const Split splits[] = {{"train", 0, n_train, &result.train},
                          {"val", n_train, n_val, &result.val}};
  for (const auto& split : splits) {
    const fs::path dir = out / split.name;
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries(split.count);
    std::vector<double> fractions(split.count);

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < split.count; i = next++) {
        try {
          char stem[32];
          std::snprintf(stem, sizeof stem, "%05zu", i);
          const Sample s = generate_sample(spec, split.first + i);
          const fs::path rel = fs::path(split.name) / stem;
          ManifestEntry e{rel.string() + "_t1.ppm", rel.string() + "_t2.ppm",
                          rel.string() + "_label.pgm"};
          write_netpbm(s.t1, out / e.t1);
          write_netpbm(s.t2, out / e.t2);
          write_netpbm(s.label, out / e.label);
          entries[i] = std::move(e);
          fractions[i] =
              static_cast<double>(std::count(s.label.pixels.begin(), s.label.pixels.end(), 255)) /
              static_cast<double>(spec.size * spec.size);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 1; t < std::max(threads, 1u); ++t) pool.emplace_back(worker);
      worker();
    }
    if (error) std::rethrow_exception(error);

    write_manifest(out / (std::string(split.name) + ".txt"), entries);
    SplitStats& st = *split.stats;
    st.count = split.count;
    if (!fractions.empty()) {
      st.min_fraction = *std::min_element(fractions.begin(), fractions.end());
      st.max_fraction = *std::max_element(fractions.begin(), fractions.end());
      double sum = 0;
      for (double f : fractions) sum += f;
      st.mean_fraction = sum / static_cast<double>(fractions.size());
    }
  }
  return result;
}

}  // namespace catcd::data

#include <algorithm>
#include <fstream>
#include <sstream>

#include "catcd/data.hpp"

namespace catcd::data {

namespace fs = std::filesystem;

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  const fs::path dir = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3 || std::any_of(fields.begin(), fields.end(),
                                          [](const std::string& f) { return f.empty(); })) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected three tab-separated paths");
    }
    entries.push_back({dir / fields[0], dir / fields[1], dir / fields[2]});
  }
  return entries;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    for (const auto& e : entries) {
      out << e.t1.generic_string() << '\t' << e.t2.generic_string() << '\t'
          << e.label.generic_string() << '\n';
    }
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

LoadedSample to_loaded(const Sample& sample) {
  return {image_to_tensor(sample.t1), image_to_tensor(sample.t2), image_to_label(sample.label)};
}

std::vector<LoadedSample> load_samples(std::span<const ManifestEntry> entries) {
  std::vector<LoadedSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const Image a = read_netpbm(e.t1);
    const Image b = read_netpbm(e.t2);
    const Image l = read_netpbm(e.label);
    if (a.channels != 3 || b.channels != 3) {
      throw FormatError(e.t1.string() + ": bi-temporal images must be RGB (P6)");
    }
    if (a.width != b.width || a.height != b.height || l.width != a.width ||
        l.height != a.height) {
      throw FormatError(e.t1.string() + ": t1, t2 and label sizes differ");
    }
    if (!out.empty() && (out.front().label.width() != a.width ||
                         out.front().label.height() != a.height)) {
      throw FormatError(e.t1.string() + ": sample size differs from the rest of the set");
    }
    train::LabelMap label;
    try {
      label = image_to_label(l);
    } catch (const FormatError& err) {
      throw FormatError(e.label.string() + ": " + err.what());
    }
    out.push_back({image_to_tensor(a), image_to_tensor(b), std::move(label)});
  }
  return out;
}

Batch make_batch(std::span<const LoadedSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Shape one = samples[indices.front()].t1.shape();
  const std::size_t per = one.numel();
  const std::size_t n = indices.size();
  Tensor<float> t1(Shape{n, one[1], one[2], one[3]});
  Tensor<float> t2(t1.shape());
  std::vector<train::LabelMap> labels;
  labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[indices[i]];
    std::ranges::copy(s.t1.data(), t1.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    std::ranges::copy(s.t2.data(), t2.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    labels.push_back(s.label);
  }
  return {std::move(t1), std::move(t2), train::LabelMap::stack(labels)};
}

template <typename T>
Tensor<T> cast(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    auto src = t.data();
    return Tensor<T>(t.shape(), std::vector<T>(src.begin(), src.end()));
  }
}

template Tensor<float> cast(const Tensor<float>&);
template Tensor<double> cast(const Tensor<float>&);

}  // namespace catcd::data

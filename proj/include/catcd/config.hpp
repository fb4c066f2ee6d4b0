#pragma once

#include <cstddef>
#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "catcd/data.hpp"
#include "catcd/model.hpp"
#include "catcd/training.hpp"

namespace catcd {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One `key = value` line. Values are split on spaces, tabs and commas.
class ConfigEntry {
 public:
  ConfigEntry(std::size_t line, std::string key, std::string value);

  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }
  std::size_t count() const { return values_.size(); }

  [[noreturn]] void fail(const std::string& why) const;

  template <typename V>
  V number(std::size_t i = 0) const;
  /// Exactly one numeric value.
  template <typename V>
  V single() const;
  std::array<std::size_t, 3> triple() const;
  bool boolean() const;
  const std::string& word() const;

 private:
  std::size_t line_;
  std::string key_;
  std::vector<std::string> values_;
};

/// Splits config text into entries, dropping `#` comments and blank lines.
/// Throws ConfigError on a line without `=`, an empty value or a repeated key.
std::vector<ConfigEntry> split_config(std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

enum class DType { f32, f64 };

/// Everything a training run depends on. Text form is `key = value` lines
/// with `#` comments; every key is optional and unknown keys are rejected.
struct RunConfig {
  std::size_t image_size = 64;
  ModelConfig model = ModelConfig::desk();
  /// One weight per deep-supervision mask, scale-major.
  std::vector<double> lambda = std::vector<double>(6, 1.0);
  train::LabelPooling label_pooling = train::LabelPooling::any;
  // Desk values, tuned on the synthetic set at 30 epochs.
  double lr = 4e-3;
  double weight_decay = 0.05;
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  std::uint64_t seed = 7;
  DType dtype = DType::f32;

  static RunConfig desk();
  static RunConfig paper();
  static RunConfig preset(std::string_view name);

  /// Applies the keys in `text` on top of `base`. Throws ConfigError with the
  /// offending line number.
  static RunConfig parse(std::string_view text, const RunConfig& base = desk());
  static RunConfig load(const std::filesystem::path& path, const RunConfig& base = desk());

  /// Canonical text form; parse(to_string()) reproduces the config.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

  std::size_t mask_count() const { return 3 * model.cat_blocks; }
  void validate() const;
};

/// Scene generator settings in the same text form; keys are the SceneSpec
/// field names.
data::SceneSpec parse_scene_spec(std::string_view text, const data::SceneSpec& base = {});

}  // namespace catcd

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "catcd/config.hpp"

namespace catcd {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_values(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != ',') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const auto& values) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& v : values) {
    if (!first) os << ' ';
    os << v;
    first = false;
  }
  return os.str();
}

}  // namespace

ConfigEntry::ConfigEntry(std::size_t line, std::string key, std::string value)
    : line_(line), key_(std::move(key)) {
  for (auto v : split_values(value)) values_.emplace_back(v);
}

void ConfigEntry::fail(const std::string& why) const {
  throw ConfigError("config line " + std::to_string(line_) + " (" + key_ + "): " + why);
}

template <typename V>
V ConfigEntry::number(std::size_t i) const {
  V v{};
  const std::string& s = values_.at(i);
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    fail("'" + s + "' is not a valid number");
  }
  return v;
}

template <typename V>
V ConfigEntry::single() const {
  if (count() != 1) fail("expected one value");
  return number<V>();
}

std::array<std::size_t, 3> ConfigEntry::triple() const {
  if (count() != 3) fail("expected three integers");
  return {number<std::size_t>(0), number<std::size_t>(1), number<std::size_t>(2)};
}

bool ConfigEntry::boolean() const {
  if (count() != 1) fail("expected true or false");
  const std::string& s = values_[0];
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  fail("'" + s + "' is not a boolean");
}

const std::string& ConfigEntry::word() const {
  if (count() != 1) fail("expected one value");
  return values_[0];
}

template double ConfigEntry::number<double>(std::size_t) const;
template std::size_t ConfigEntry::number<std::size_t>(std::size_t) const;
template double ConfigEntry::single<double>() const;
template std::size_t ConfigEntry::single<std::size_t>() const;

std::vector<ConfigEntry> split_config(std::string_view text) {
  std::vector<ConfigEntry> out;
  std::set<std::string, std::less<>> seen;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    ConfigEntry e(lineno, std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    if (e.key().empty()) e.fail("missing key");
    if (!seen.emplace(e.key()).second) e.fail("key given twice");
    if (e.count() == 0) e.fail("missing value");
    out.push_back(std::move(e));
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper() {
  RunConfig c;
  c.image_size = 256;
  c.model = ModelConfig::paper();
  c.lambda.assign(6, 1.0);
  c.lr = 2e-4;
  c.weight_decay = 0.01;
  c.batch_size = 16;
  c.epochs = 200;
  return c;
}

RunConfig RunConfig::preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
}

RunConfig RunConfig::parse(std::string_view text, const RunConfig& base) {
  RunConfig c = base;
  std::vector<double> lambda_in;
  for (const auto& p : split_config(text)) {
    const std::string& key = p.key();
    if (key == "image_size") {
      c.image_size = p.single<std::size_t>();
    } else if (key == "channels") {
      c.model.encoder.channels = p.triple();
    } else if (key == "stem_channels") {
      c.model.encoder.stem_channels = p.single<std::size_t>();
    } else if (key == "encoder_blocks") {
      c.model.encoder.blocks = p.triple();
    } else if (key == "heads") {
      c.model.heads = p.triple();
    } else if (key == "window_size") {
      c.model.window_size = p.single<std::size_t>();
    } else if (key == "mlp_ratio") {
      c.model.mlp_ratio = p.single<std::size_t>();
    } else if (key == "cat_blocks") {
      c.model.cat_blocks = p.single<std::size_t>();
    } else if (key == "use_gc_cross") {
      c.model.use_gc_cross = p.boolean();
    } else if (key == "use_self_attn") {
      c.model.use_self_attn = p.boolean();
    } else if (key == "use_dud") {
      c.model.use_dud = p.boolean();
    } else if (key == "lambda") {
      lambda_in.clear();
      for (std::size_t i = 0; i < p.count(); ++i) lambda_in.push_back(p.number<double>(i));
    } else if (key == "label_pooling") {
      const auto w = p.word();
      if (w == "any") {
        c.label_pooling = train::LabelPooling::any;
      } else if (w == "nearest") {
        c.label_pooling = train::LabelPooling::nearest;
      } else {
        p.fail("expected any or nearest");
      }
    } else if (key == "lr") {
      c.lr = p.single<double>();
    } else if (key == "weight_decay") {
      c.weight_decay = p.single<double>();
    } else if (key == "batch_size") {
      c.batch_size = p.single<std::size_t>();
    } else if (key == "epochs") {
      c.epochs = p.single<std::size_t>();
    } else if (key == "seed") {
      c.seed = p.single<std::size_t>();
    } else if (key == "dtype") {
      const auto w = p.word();
      if (w == "f32" || w == "float32") {
        c.dtype = DType::f32;
      } else if (w == "f64" || w == "float64") {
        c.dtype = DType::f64;
      } else {
        p.fail("expected f32 or f64");
      }
    } else {
      p.fail("unknown key");
    }
  }
  // a single lambda applies to every mask; resolved last so cat_blocks may follow it
  if (lambda_in.size() == 1) {
    c.lambda.assign(c.mask_count(), lambda_in[0]);
  } else if (!lambda_in.empty()) {
    c.lambda = lambda_in;
  } else if (c.lambda.size() != c.mask_count() && !c.lambda.empty() &&
             std::all_of(c.lambda.begin(), c.lambda.end(),
                         [&](double v) { return v == c.lambda.front(); })) {
    c.lambda.assign(c.mask_count(), c.lambda.front());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const RunConfig& base) {
  const std::string text = read_text_file(path);
  try {
    return parse(text, base);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string RunConfig::to_string() const {
  std::ostringstream os;
  os.precision(17);
  const auto b = [](bool v) { return v ? "true" : "false"; };
  os << "image_size = " << image_size << '\n'
     << "stem_channels = " << model.encoder.stem_channels << '\n'
     << "channels = " << join(model.encoder.channels) << '\n'
     << "encoder_blocks = " << join(model.encoder.blocks) << '\n'
     << "heads = " << join(model.heads) << '\n'
     << "window_size = " << model.window_size << '\n'
     << "mlp_ratio = " << model.mlp_ratio << '\n'
     << "cat_blocks = " << model.cat_blocks << '\n'
     << "use_gc_cross = " << b(model.use_gc_cross) << '\n'
     << "use_self_attn = " << b(model.use_self_attn) << '\n'
     << "use_dud = " << b(model.use_dud) << '\n'
     << "lambda = " << join(lambda) << '\n'
     << "label_pooling = " << (label_pooling == train::LabelPooling::any ? "any" : "nearest")
     << '\n'
     << "lr = " << lr << '\n'
     << "weight_decay = " << weight_decay << '\n'
     << "batch_size = " << batch_size << '\n'
     << "epochs = " << epochs << '\n'
     << "seed = " << seed << '\n'
     << "dtype = " << (dtype == DType::f32 ? "f32" : "f64") << '\n';
  return os.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_string();
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (image_size == 0 || image_size % 16 != 0) {
    throw ConfigError("image_size must be a positive multiple of 16");
  }
  if (lambda.size() != mask_count()) {
    throw ConfigError("lambda needs 1 or " + std::to_string(mask_count()) + " values, got " +
                      std::to_string(lambda.size()));
  }
  if (std::any_of(lambda.begin(), lambda.end(), [](double v) { return !(v >= 0); })) {
    throw ConfigError("lambda values must be >= 0");
  }
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
}

}  // namespace catcd

namespace catcd {

data::SceneSpec parse_scene_spec(std::string_view text, const data::SceneSpec& base) {
  data::SceneSpec s = base;
  for (const auto& p : split_config(text)) {
    const std::string& key = p.key();
    if (key == "size") {
      s.size = p.single<std::size_t>();
    } else if (key == "seed") {
      s.seed = p.single<std::size_t>();
    } else if (key == "min_changes") {
      s.min_changes = p.single<std::size_t>();
    } else if (key == "max_changes") {
      s.max_changes = p.single<std::size_t>();
    } else if (key == "persistent_shapes") {
      s.persistent_shapes = p.single<std::size_t>();
    } else if (key == "min_extent") {
      s.min_extent = p.single<std::size_t>();
    } else if (key == "max_extent") {
      s.max_extent = p.single<std::size_t>();
    } else if (key == "border") {
      s.border = p.single<std::size_t>();
    } else if (key == "brightness") {
      s.brightness = p.single<double>();
    } else if (key == "noise") {
      s.noise = p.single<double>();
    } else if (key == "drift") {
      s.drift = p.single<double>();
    } else if (key == "min_fraction") {
      s.min_fraction = p.single<double>();
    } else if (key == "max_fraction") {
      s.max_fraction = p.single<double>();
    } else {
      p.fail("unknown key");
    }
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

}  // namespace catcd

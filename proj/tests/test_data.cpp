#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>

#include <unistd.h>

#include "catcd/checkpoint.hpp"
#include "catcd/data.hpp"
#include "catcd/model.hpp"
#include "catcd/ops.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace catcd;
using namespace catcd::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("catcd_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::size_t changed(const Image& label) {
  return static_cast<std::size_t>(std::count(label.pixels.begin(), label.pixels.end(), 255));
}

}  // namespace

// ---- netpbm ---------------------------------------------------------------------------

TEST_CASE("netpbm header and payload") {
  SUBCASE("P6 64 64 255 parses to 64x64x3") {
    auto bytes = bytes_of("P6 64 64 255\n");
    bytes.resize(bytes.size() + 64 * 64 * 3, 17);
    const Image img = parse_netpbm(bytes);
    CHECK(img.width == 64);
    CHECK(img.height == 64);
    CHECK(img.channels == 3);
    CHECK(img.pixels[0] == 17);
  }
  SUBCASE("comments between header fields") {
    auto bytes = bytes_of("P5\n# made by hand\n2 1\n# max\n255\n");
    bytes.push_back(0);
    bytes.push_back(255);
    const Image img = parse_netpbm(bytes);
    CHECK(img.channels == 1);
    CHECK(img.pixels == std::vector<std::uint8_t>{0, 255});
  }
  SUBCASE("payload bytes that look like whitespace are kept") {
    auto bytes = bytes_of("P5 2 1 255\n");
    bytes.push_back('\n');
    bytes.push_back(' ');
    CHECK(parse_netpbm(bytes).pixels == std::vector<std::uint8_t>{'\n', ' '});
  }
  SUBCASE("all-black P6 gives a zero tensor") {
    const Image black(5, 4, 3);
    const auto t = image_to_tensor(parse_netpbm(encode_netpbm(black)));
    CHECK(t.shape() == Shape{1, 3, 4, 5});
    CHECK(std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; }));
  }
  SUBCASE("layout is channel-major after load") {
    Image img(2, 1, 3);
    img.pixels = {10, 20, 30, 40, 50, 60};  // (x0: rgb) (x1: rgb)
    const auto t = image_to_tensor(img);
    CHECK(t.data()[0] == doctest::Approx(10 / 255.0));
    CHECK(t.data()[1] == doctest::Approx(40 / 255.0));
    CHECK(t.data()[2] == doctest::Approx(20 / 255.0));
    CHECK(t.data()[5] == doctest::Approx(60 / 255.0));
  }
}

TEST_CASE("netpbm save and load round trip within quantization") {
  TempDir dir;
  std::mt19937_64 rng(3);
  const auto t = testing::random_tensor<float>(Shape{1, 3, 9, 13}, rng, 0.0, 1.0);
  write_netpbm(tensor_to_image(t), dir.path / "x.ppm");
  const auto back = image_to_tensor(read_netpbm(dir.path / "x.ppm"));
  REQUIRE(back.shape() == t.shape());
  double worst = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    worst = std::max(worst, std::abs(double(back.data()[i]) - double(t.data()[i])));
  }
  CHECK(worst <= 1.0 / 255.0);
  CHECK(worst <= 0.5 / 255.0 + 1e-7);  // rounding, not truncation

  // out-of-range values clamp
  Tensor<double> wild(Shape{1, 1, 1, 2}, std::vector<double>{-3.0, 7.0});
  CHECK(tensor_to_image(wild).pixels == std::vector<std::uint8_t>{0, 255});
  CHECK(!fs::exists(dir.path / "x.ppm.tmp"));
}

TEST_CASE("netpbm errors") {
  auto payload = [](std::string header, std::size_t n) {
    auto b = bytes_of(header);
    b.resize(b.size() + n, 0);
    return b;
  };
  CHECK_THROWS_AS(parse_netpbm(payload("P3 2 2 255\n", 12)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 2 x 255\n", 12)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 2 2\n", 12)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 2 2 65535\n", 24)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 2 2 15\n", 12)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 2 2 255\n", 11)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 0 2 255\n", 0)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 2 2 255", 0)), FormatError);
  CHECK_THROWS_AS(parse_netpbm(payload("P6 9999999999 2 255\n", 0)), FormatError);
  CHECK_THROWS_AS(read_netpbm("/nonexistent/catcd.ppm"), FormatError);
  CHECK_NOTHROW(parse_netpbm(payload("P6 2 2 255\n", 12)));
}

TEST_CASE("labels map 255 to 1 and reject other values") {
  Image img(3, 1, 1);
  img.pixels = {0, 255, 0};
  const auto label = image_to_label(img);
  CHECK(label.values()[1] == 1);
  CHECK(label.count_changed() == 1);
  CHECK(label_to_image(label) == img);
  img.pixels[2] = 128;
  CHECK_THROWS_AS(image_to_label(img), FormatError);
  CHECK_THROWS_AS(image_to_label(Image(2, 2, 3)), FormatError);
}

// ---- generator ------------------------------------------------------------------------

TEST_CASE("one 8x8 rectangle added gives 64 changed pixels") {
  SceneSpec spec;
  spec.size = 32;
  SceneLayout layout;
  Shape2D rect;
  rect.x0 = 10;
  rect.y0 = 5;
  rect.w = 8;
  rect.h = 8;
  rect.color[0] = 1.0f;
  layout.added.push_back(rect);
  const Sample s = render(spec, layout);
  CHECK(changed(s.label) == 64);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      const bool inside = x >= 10 && x < 18 && y >= 5 && y < 13;
      CHECK((s.label.pixels[y * 32 + x] == 255) == inside);
      const std::size_t i = (y * 32 + x) * 3;
      CHECK((s.t2.pixels[i] == 255) == inside);
      CHECK(s.t1.pixels[i] == 128);
    }
  }
}

TEST_CASE("ellipse coverage is symmetric and inside its box") {
  Shape2D e;
  e.ellipse = true;
  e.x0 = 3;
  e.y0 = 4;
  e.w = 9;
  e.h = 6;
  std::size_t n = 0;
  for (std::size_t y = 0; y < 20; ++y) {
    for (std::size_t x = 0; x < 20; ++x) {
      if (!e.covers(x, y)) continue;
      ++n;
      CHECK(e.covers(2 * e.x0 + e.w - 1 - x, y));
      CHECK(e.covers(x, 2 * e.y0 + e.h - 1 - y));
    }
  }
  // area of the inscribed ellipse, pi*4.5*3 ~ 42
  CHECK(n > 36);
  CHECK(n < 48);
}

TEST_CASE("zero change shapes give an all-zero label") {
  SceneSpec spec;
  spec.min_changes = 0;
  spec.max_changes = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto layout = sample_layout(spec, i);
    CHECK(layout.added.empty());
    CHECK(layout.removed.empty());
    const Sample s = render(spec, layout);
    CHECK(changed(s.label) == 0);
    // only distractors separate the pair: small everywhere
    double total = 0;
    for (std::size_t k = 0; k < s.t1.pixels.size(); ++k) {
      total += std::abs(int(s.t1.pixels[k]) - int(s.t2.pixels[k])) / 255.0;
    }
    CHECK(total / double(s.t1.pixels.size()) < 0.3);
  }
  // the distractors do change pixels
  const Sample s = generate_sample(spec, 1);
  CHECK(s.t1.pixels != s.t2.pixels);
}

TEST_CASE("distractor-only differences never enter the label") {
  SceneSpec spec;
  for (std::uint64_t i = 0; i < 40; ++i) {
    SceneLayout layout = sample_layout(spec, i);
    const Sample with = render(spec, layout);
    layout.brightness_shift = 0;
    layout.noise_sigma = 0;
    layout.drift_phase = 0;
    const Sample without = render(spec, layout);
    CHECK(with.label == without.label);
  }
}

TEST_CASE("generated samples obey fraction, border and count bounds") {
  SceneSpec spec;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto layout = sample_layout(spec, i);
    const std::size_t k = layout.added.size() + layout.removed.size();
    CHECK(k >= 1);
    CHECK(k <= 4);
    for (const auto* list : {&layout.added, &layout.removed}) {
      for (const auto& s : *list) {
        CHECK(s.x0 >= spec.border);
        CHECK(s.y0 >= spec.border);
        CHECK(s.x0 + s.w + spec.border <= spec.size);
        CHECK(s.y0 + s.h + spec.border <= spec.size);
      }
    }
    const Sample s = render(spec, layout);
    const double f = double(changed(s.label)) / double(spec.size * spec.size);
    CHECK(f >= 0.005);
    CHECK(f <= 0.35);
    for (std::size_t y = 0; y < spec.size; ++y) {
      for (std::size_t x = 0; x < spec.size; ++x) {
        if (x < 2 || y < 2 || x >= spec.size - 2 || y >= spec.size - 2) {
          CHECK(s.label.pixels[y * spec.size + x] == 0);
        }
      }
    }
  }
}

TEST_CASE("generation is a pure function of seed and index") {
  SceneSpec spec;
  const Sample a = generate_sample(spec, 12);
  generate_sample(spec, 3);
  const Sample b = generate_sample(spec, 12);
  CHECK(a.t1 == b.t1);
  CHECK(a.t2 == b.t2);
  CHECK(a.label == b.label);
  spec.seed = 8;
  CHECK(!(generate_sample(spec, 12).t1 == a.t1));
}

TEST_CASE("same seed twice gives a byte-identical dataset") {
  TempDir a, b;
  SceneSpec spec;
  spec.size = 32;
  const auto stats = generate_dataset(spec, 6, 3, a.path, 1);
  generate_dataset(spec, 6, 3, b.path, 4);
  CHECK(stats.train.count == 6);
  CHECK(stats.val.count == 3);
  CHECK(stats.train.min_fraction >= 0.005);
  CHECK(stats.train.max_fraction <= 0.35);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a.path);
    CHECK(file_bytes(e.path()) == file_bytes(b.path / rel));
  }
  CHECK(files == 9 * 3 + 2);

  // val continues the index sequence after train
  const auto val = read_manifest(a.path / "val.txt");
  REQUIRE(val.size() == 3);
  const Sample s = generate_sample(spec, 6);
  CHECK(read_netpbm(val[0].t1) == s.t1);
  CHECK(read_netpbm(val[0].label) == s.label);
}

TEST_CASE("invalid scene specs are rejected") {
  SceneSpec spec;
  spec.brightness = 0.2;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.noise = 0.06;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.min_changes = 3;
  spec.max_changes = 2;
  CHECK_THROWS_AS(sample_layout(spec, 0), std::invalid_argument);
  spec = {};
  spec.size = 8;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

// ---- manifests and batches ------------------------------------------------------------

TEST_CASE("manifest read, write and batching") {
  TempDir dir;
  SceneSpec spec;
  spec.size = 16;
  spec.max_extent = 8;
  generate_dataset(spec, 4, 0, dir.path);
  const auto entries = read_manifest(dir.path / "train.txt");
  REQUIRE(entries.size() == 4);
  CHECK(fs::exists(entries[3].label));
  CHECK(read_manifest(dir.path / "val.txt").empty());

  const auto samples = load_samples(entries);
  const std::size_t idx[] = {2, 0};
  const Batch batch = make_batch(samples, idx);
  CHECK(batch.t1.shape() == Shape{2, 3, 16, 16});
  CHECK(batch.label.batch() == 2);
  CHECK(batch.label.sample(0) == samples[2].label);
  CHECK(std::equal(samples[0].t2.data().begin(), samples[0].t2.data().end(),
                   batch.t2.data().begin() + 3 * 16 * 16));
  const auto d = cast<double>(batch.t1);
  CHECK(d.data()[5] == double(batch.t1.data()[5]));

  std::ofstream(dir.path / "bad.txt") << "only\ttwo\n";
  CHECK_THROWS_AS(read_manifest(dir.path / "bad.txt"), FormatError);
  std::ofstream(dir.path / "blank.txt") << "\n\n";
  CHECK(read_manifest(dir.path / "blank.txt").empty());

  // a 32x32 sample in a 16x16 set
  SceneSpec big = spec;
  big.size = 32;
  generate_dataset(big, 1, 0, dir.path / "big");
  auto mixed = entries;
  mixed.push_back(read_manifest(dir.path / "big" / "train.txt")[0]);
  CHECK_THROWS_AS(load_samples(mixed), FormatError);
}

// ---- checkpoints ----------------------------------------------------------------------

TEST_CASE("checkpoint layout of a single scalar") {
  const std::vector<Parameter<float>> one{{"a", Tensor<float>::scalar(1.5f)}};
  const auto bytes = encode_checkpoint<float>(one);
  REQUIRE(bytes.size() == 25);
  const std::vector<std::uint8_t> expected{
      'C', 'A', 'T', 'W', 1, 0, 0, 0, 1, 0, 0, 0,  // magic, version, count
      1, 0, 'a',                                   // name
      0, 1, 1, 0, 0, 0,                            // dtype, ndim, dims
      0x00, 0x00, 0xC0, 0x3F};                     // 1.5f
  CHECK(bytes == expected);
  const auto back = decode_checkpoint<float>(bytes);
  REQUIRE(back.size() == 1);
  CHECK(back[0].name == "a");
  CHECK(back[0].value.item() == 1.5f);
}

TEST_CASE("checkpoint save, load, save is byte-identical for a model with optimizer state") {
  TempDir dir;
  nn::Rng rng(4);
  ParamSet<float> ps;
  auto cfg = ModelConfig::desk();
  auto net = CATNet<float>::create(ps, cfg, rng);
  std::mt19937_64 drng(1);
  {
    Tape tape;
    TapeScope scope(tape);
    const auto x1 = testing::random_tensor<float>(Shape{1, 3, 32, 32}, drng, 0, 1);
    const auto x2 = testing::random_tensor<float>(Shape{1, 3, 32, 32}, drng, 0, 1);
    const auto out = net(x1, x2, nn::Mode{ops::NormMode::train, true});
    backward(ops::sum(out.logits), tape);
  }
  train::AdamW<float> opt(ps, {});
  opt.step(2e-4);

  auto tensors = collect(ps);
  const auto state = opt.state();
  tensors.insert(tensors.end(), state.begin(), state.end());
  save_checkpoint<float>(tensors, dir.path / "a.catw");
  const auto loaded = load_checkpoint<float>(dir.path / "a.catw");
  save_checkpoint<float>(loaded, dir.path / "b.catw");
  CHECK(file_bytes(dir.path / "a.catw") == file_bytes(dir.path / "b.catw"));

  // restore into a fresh model reproduces every value, including running stats
  nn::Rng rng2(99);
  ParamSet<float> ps2;
  CATNet<float>::create(ps2, cfg, rng2);
  restore<float>(ps2, loaded);
  const auto a = collect(ps), b = collect(ps2);
  REQUIRE(a.size() == b.size());
  bool same = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && std::ranges::equal(a[i].value.data(), b[i].value.data());
  }
  CHECK(same);
  CHECK(ps.buffers().size() > 0);

  CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "a.catw"), FormatError);
}

TEST_CASE("checkpoint format errors") {
  const std::vector<Parameter<double>> two{
      {"w", Tensor<double>(Shape{2, 3}, 0.25)}, {"b", Tensor<double>(Shape{3}, -1.0)}};
  const auto good = encode_checkpoint<double>(two);
  CHECK(decode_checkpoint<double>(good).size() == 2);

  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint<double>(bad), doctest::Contains("magic"), FormatError);
  bad = good;
  bad[4] = 2;
  CHECK_THROWS_WITH_AS(decode_checkpoint<double>(bad), doctest::Contains("version"), FormatError);
  for (std::size_t n = 0; n < good.size(); ++n) {
    CHECK_THROWS_AS(decode_checkpoint<double>(std::span(good).first(n)), FormatError);
  }
  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint<double>(bad), FormatError);

  // rename "b" to "w" in place
  bad = good;
  const std::size_t second_name = 12 + 2 + 1 + 1 + 1 + 8 + 6 * 8 + 2;
  REQUIRE(bad[second_name] == 'b');
  bad[second_name] = 'w';
  CHECK_THROWS_WITH_AS(decode_checkpoint<double>(bad), doctest::Contains("duplicate"),
                       FormatError);

  const std::vector<Parameter<double>> dup{{"x", Tensor<double>::scalar(1)},
                                           {"x", Tensor<double>::scalar(2)}};
  CHECK_THROWS_AS(encode_checkpoint<double>(dup), std::invalid_argument);
}

TEST_CASE("restore reports a shape diff and leaves the model untouched") {
  ParamSet<double> ps;
  auto w = ps.add("w", Tensor<double>(Shape{2, 3}, 1.0));
  auto b = ps.add("b", Tensor<double>(Shape{3}, 1.0));
  ps.add_buffer("stat", Tensor<double>(Shape{3}, 1.0));

  const std::vector<Parameter<double>> ckpt{{"w", Tensor<double>(Shape{2, 3}, 5.0)},
                                            {"b", Tensor<double>(Shape{4}, 5.0)},
                                            {"extra", Tensor<double>(Shape{1}, 5.0)},
                                            {"opt.step", Tensor<double>(Shape{2}, 0.0)}};
  try {
    restore<double>(ps, ckpt);
    FAIL("expected a mismatch");
  } catch (const CheckpointMismatch& e) {
    const std::string msg = e.what();
    CHECK(msg.find("b: expected [3], found [4]") != std::string::npos);
    CHECK(msg.find("missing stat: expected [3]") != std::string::npos);
    CHECK(msg.find("unexpected extra") != std::string::npos);
    CHECK(msg.find("opt.step") == std::string::npos);
    CHECK(msg.find("w:") == std::string::npos);
  }
  CHECK(w.data()[0] == 1.0);
  CHECK(b.data()[0] == 1.0);

  const std::vector<Parameter<double>> fits{{"stat", Tensor<double>(Shape{3}, 7.0)},
                                            {"w", Tensor<double>(Shape{2, 3}, 5.0)},
                                            {"b", Tensor<double>(Shape{3}, 6.0)}};
  restore<double>(ps, fits);
  CHECK(w.data()[5] == 5.0);
  CHECK(b.data()[0] == 6.0);
  CHECK(ps.buffers()[0].value.data()[2] == 7.0);
}

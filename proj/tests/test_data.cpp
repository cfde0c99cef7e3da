#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "scnn/data.hpp"

using namespace scnn;
namespace fs = std::filesystem;

namespace {

// Uniform synthetic dataset shorthand.
LabeledDataset synth(std::size_t classes, std::size_t per_class,
                     std::size_t size, std::size_t channels,
                     std::uint64_t seed, std::size_t offset = 0) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.samples_per_class = per_class;
  spec.image_size = size;
  spec.channels = channels;
  spec.seed = seed;
  spec.class_offset = offset;
  return generate_synthetic(spec);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("scnn_test_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// A dataset with ids only (images irrelevant for fold arithmetic).
LabeledDataset id_dataset(const std::vector<std::size_t>& class_sizes) {
  LabeledDataset ds;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    ds.class_names.push_back("class_" + std::to_string(c));
    for (std::size_t i = 0; i < class_sizes[c]; ++i) {
      Sample s;
      s.image = TensorF({1, 1, 2, 2});
      s.label = static_cast<int>(c);
      s.id = "class_" + std::to_string(c) + "/img_" + std::to_string(i);
      ds.samples.push_back(std::move(s));
    }
  }
  ds.channel_means = {0.0f};
  return ds;
}

}  // namespace

TEST_CASE("21 classes x 100 samples, k=5: exactly 20 per class per fold") {
  LabeledDataset ds = id_dataset(std::vector<std::size_t>(21, 100));
  FoldSplit folds = make_folds(ds, 5, 7);
  // fold -> class -> count
  std::map<int, std::map<int, int>> counts;
  for (const Sample& s : ds.samples)
    ++counts[folds.assignment.at(s.id)][s.label];
  REQUIRE(counts.size() == 5);
  for (auto& [fold, per_class] : counts) {
    int total = 0;
    REQUIRE(per_class.size() == 21);
    for (auto& [cls, n] : per_class) {
      CHECK(n == 20);
      total += n;
    }
    CHECK(total == 420);
  }
}

TEST_CASE("2 classes x 1438, k=5: per-class fold sizes in {287, 288}") {
  LabeledDataset ds = id_dataset({1438, 1438});
  FoldSplit folds = make_folds(ds, 5, 3);
  std::map<int, std::map<int, int>> counts;
  for (const Sample& s : ds.samples)
    ++counts[folds.assignment.at(s.id)][s.label];
  for (auto& [fold, per_class] : counts)
    for (auto& [cls, n] : per_class) CHECK((n == 287 || n == 288));
}

TEST_CASE("fold partition and stratification properties, randomized") {
  Prng rng(555);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t classes = 1 + rng.next_below(5);
    int k = 2 + static_cast<int>(rng.next_below(5));
    std::vector<std::size_t> sizes;
    for (std::size_t c = 0; c < classes; ++c)
      sizes.push_back(static_cast<std::size_t>(k) + rng.next_below(40));
    std::uint64_t seed = rng.next_u64();
    LabeledDataset ds = id_dataset(sizes);
    FoldSplit folds = make_folds(ds, k, seed);

    // partition: every sample assigned to exactly one fold in [0, k)
    CHECK(folds.assignment.size() == ds.samples.size());
    for (const Sample& s : ds.samples) {
      int f = folds.assignment.at(s.id);
      CHECK(f >= 0);
      CHECK(f < k);
    }
    // stratification: per-class fold sizes differ by at most 1
    std::map<int, std::map<int, int>> counts;
    for (const Sample& s : ds.samples)
      ++counts[s.label][folds.assignment.at(s.id)];
    for (auto& [cls, per_fold] : counts) {
      int lo = INT32_MAX, hi = 0;
      for (int f = 0; f < k; ++f) {
        int n = per_fold.count(f) ? per_fold[f] : 0;
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      CHECK(hi - lo <= 1);
    }
    // determinism
    FoldSplit again = make_folds(ds, k, seed);
    CHECK(again.assignment == folds.assignment);
  }
}

TEST_CASE("make_folds rejects undersized classes and k < 2") {
  LabeledDataset ds = id_dataset({4, 10});
  CHECK_THROWS_AS(make_folds(ds, 5, 1), Error);  // class 0 has only 4
  CHECK_THROWS_AS(make_folds(ds, 1, 1), Error);
}

TEST_CASE("fold persistence round-trips") {
  TempDir tmp("folds");
  LabeledDataset ds = id_dataset({6, 6});
  FoldSplit folds = make_folds(ds, 3, 11);
  save_folds(tmp.path / "folds.csv", folds);
  FoldSplit loaded = load_folds(tmp.path / "folds.csv");
  CHECK(loaded.k == folds.k);
  CHECK(loaded.assignment == folds.assignment);

  // fold_indices splits the dataset into complementary sets
  auto in0 = fold_indices(ds, folds, 0, true);
  auto out0 = fold_indices(ds, folds, 0, false);
  CHECK(in0.size() + out0.size() == ds.samples.size());
  std::set<std::size_t> seen(in0.begin(), in0.end());
  for (std::size_t i : out0) CHECK(seen.count(i) == 0);
}

TEST_CASE("synthetic generator: counts, determinism, matched means") {
  LabeledDataset ds = synth(4, 5, 16, 3, 42);
  CHECK(ds.num_classes() == 4);
  CHECK(ds.samples.size() == 20);
  for (const Sample& s : ds.samples) {
    CHECK(s.image.shape() == std::vector<std::size_t>{1, 3, 16, 16});
    CHECK(!s.id.empty());
  }
  // samples ordered by (class, id)
  for (std::size_t i = 1; i < ds.samples.size(); ++i)
    CHECK(ds.samples[i - 1].label <= ds.samples[i].label);

  // bit-identical regeneration
  LabeledDataset again = synth(4, 5, 16, 3, 42);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(ds.samples[i].id == again.samples[i].id);
    CHECK(ds.samples[i].image == again.samples[i].image);
  }
  LabeledDataset other = synth(4, 5, 16, 3, 43);
  CHECK_FALSE(ds.samples[0].image == other.samples[0].image);

  // every image has channel mean 0.5 by construction, so per-pixel
  // statistics cannot distinguish classes
  for (const Sample& s : ds.samples) {
    std::size_t plane = 16 * 16;
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t p = 0; p < plane; ++p)
        mean += s.image[c * plane + p];
      mean /= static_cast<double>(plane);
      CHECK(std::fabs(mean - 0.5) < 1e-3);
    }
  }
  for (float m : ds.channel_means) CHECK(m == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("class_offset yields a disjoint generator family") {
  LabeledDataset source = synth(3, 2, 12, 1, 9, 0);
  LabeledDataset target = synth(3, 2, 12, 1, 9, 3);
  // same label indices, but the underlying textures differ
  for (std::size_t i = 0; i < source.samples.size(); ++i)
    CHECK_FALSE(source.samples[i].image == target.samples[i].image);
}

TEST_CASE("rawf container round-trips bit-exactly") {
  TempDir tmp("rawf");
  TensorF img = TensorF::seeded_uniform({1, 3, 5, 7}, -2, 2, 77);
  img[0] = -0.0f;  // signed zero must survive
  write_rawf(tmp.path / "x.rawf", img);
  TensorF back = read_rawf(tmp.path / "x.rawf");
  CHECK(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    std::uint32_t a, b;
    std::memcpy(&a, &img[i], 4);
    std::memcpy(&b, &back[i], 4);
    CHECK(a == b);
  }

  // 16-byte header: magic + three u32 extents
  std::ifstream f(tmp.path / "x.rawf", std::ios::binary);
  char head[16];
  f.read(head, 16);
  CHECK(std::string(head, 4) == "RAWF");
  CHECK(fs::file_size(tmp.path / "x.rawf") == 16 + 3 * 5 * 7 * 4);
}

TEST_CASE("rawf errors are structured") {
  TempDir tmp("rawf_err");
  std::ofstream(tmp.path / "bad.rawf") << "not a rawf file at all";
  try {
    read_rawf(tmp.path / "bad.rawf");
    FAIL("expected bad_magic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::bad_magic);
  }

  TensorF img({1, 1, 4, 4});
  write_rawf(tmp.path / "t.rawf", img);
  fs::resize_file(tmp.path / "t.rawf", 20);  // cut into the pixel data
  try {
    read_rawf(tmp.path / "t.rawf");
    FAIL("expected truncated_file");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::truncated_file);
  }
}

TEST_CASE("pnm round-trips within quantization error") {
  TempDir tmp("pnm");
  TensorF rgb = TensorF::seeded_uniform({1, 3, 6, 4}, 0, 1, 88);
  write_pnm(tmp.path / "img.ppm", rgb);
  TensorF back = read_pnm(tmp.path / "img.ppm");
  CHECK(back.shape() == rgb.shape());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    CHECK(std::fabs(back[i] - rgb[i]) <= 0.5f / 255.0f + 1e-6f);

  TensorF gray = TensorF::seeded_uniform({1, 1, 3, 3}, 0, 1, 89);
  write_pnm(tmp.path / "img.pgm", gray);
  TensorF gback = read_pnm(tmp.path / "img.pgm");
  CHECK(gback.shape() == gray.shape());

  // 8-bit exact round trip: quantized values survive a second cycle exactly
  write_pnm(tmp.path / "img2.ppm", back);
  TensorF twice = read_pnm(tmp.path / "img2.ppm");
  CHECK(twice == back);
}

TEST_CASE("pnm header parsing handles comments and rejects bad files") {
  TempDir tmp("pnm_hdr");
  {
    std::ofstream f(tmp.path / "c.pgm", std::ios::binary);
    f << "P5\n# a comment line\n2 2\n255\n";
    unsigned char px[4] = {0, 85, 170, 255};
    f.write(reinterpret_cast<char*>(px), 4);
  }
  TensorF img = read_pnm(tmp.path / "c.pgm");
  CHECK(img.shape() == std::vector<std::size_t>{1, 1, 2, 2});
  CHECK(img[0] == 0.0f);
  CHECK(img[3] == 1.0f);
  CHECK(img[1] == doctest::Approx(85.0 / 255.0));

  std::ofstream(tmp.path / "bad.pgm") << "P7 nonsense";
  CHECK_THROWS_AS(read_pnm(tmp.path / "bad.pgm"), Error);
  {
    std::ofstream f(tmp.path / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\nxy";  // claims 16 pixels, provides 2
  }
  try {
    read_pnm(tmp.path / "short.pgm");
    FAIL("expected truncated_file");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::truncated_file);
  }
}

TEST_CASE("write_dataset then load_dataset reproduces the corpus") {
  TempDir tmp("roundtrip");
  LabeledDataset ds = synth(3, 4, 8, 3, 13);
  write_dataset(ds, tmp.path);
  LabeledDataset loaded = load_dataset(tmp.path);
  CHECK(loaded.class_names == ds.class_names);
  REQUIRE(loaded.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(loaded.samples[i].id == ds.samples[i].id);
    CHECK(loaded.samples[i].label == ds.samples[i].label);
    CHECK(loaded.samples[i].image == ds.samples[i].image);  // rawf: bit-exact
  }
  // loading twice gives identical ordering
  LabeledDataset twice = load_dataset(tmp.path);
  for (std::size_t i = 0; i < loaded.samples.size(); ++i)
    CHECK(twice.samples[i].id == loaded.samples[i].id);
}

TEST_CASE("load_dataset: class index is lexicographic rank; errors named") {
  TempDir tmp("lex");
  // created out of order on purpose
  for (const std::string& name : {"zebra", "apple", "mango"})
    fs::create_directories(tmp.path / name);
  TensorF img({1, 1, 2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
  write_rawf(tmp.path / "zebra" / "z.rawf", img);
  write_rawf(tmp.path / "apple" / "a.rawf", img);
  write_rawf(tmp.path / "mango" / "m.rawf", img);
  LabeledDataset ds = load_dataset(tmp.path);
  CHECK(ds.class_names == std::vector<std::string>{"apple", "mango", "zebra"});
  CHECK(ds.samples[0].id == "apple/a.rawf");
  CHECK(ds.samples[0].label == 0);
  CHECK(ds.samples[2].id == "zebra/z.rawf");
  CHECK(ds.samples[2].label == 2);

  fs::create_directories(tmp.path / "empty_class");
  CHECK_THROWS_AS(load_dataset(tmp.path), Error);
  fs::remove_all(tmp.path / "empty_class");

  // inconsistent channel count across classes is fatal
  write_rawf(tmp.path / "apple" / "rgb.rawf", TensorF({1, 3, 2, 2}));
  CHECK_THROWS_AS(load_dataset(tmp.path), Error);
}

TEST_CASE("augment: mirror frequency, crop geometry, crop_ratio=1 identity") {
  TensorF img = TensorF::seeded_uniform({1, 1, 8, 8}, 0, 1, 17);

  // crop_ratio 1: output is either the image or its exact mirror
  std::size_t mirrored = 0;
  const std::size_t trials = 10000;
  TensorF mirror = crop_flip(img, CropWindow{0, 0, 8, 8}, true);
  Prng rng(999);
  for (std::size_t t = 0; t < trials; ++t) {
    TensorF out = augment(img, rng, 1.0);
    if (out == mirror)
      ++mirrored;
    else
      CHECK(out == img);
  }
  double freq = static_cast<double>(mirrored) / trials;
  CHECK(std::fabs(freq - 0.5) < 0.02);

  // crop_ratio 0.5 on 8x8: 4x4 outputs whose content appears in the source
  Prng rng2(1000);
  for (int t = 0; t < 50; ++t) {
    TensorF out = augment(img, rng2, 0.5);
    CHECK(out.shape() == std::vector<std::size_t>{1, 1, 4, 4});
  }

  CHECK_THROWS_AS(augment(img, rng, 0.0), Error);
  CHECK_THROWS_AS(augment(img, rng, 1.5), Error);
}

TEST_CASE("augment vflip only fires when allowed") {
  TensorF img = TensorF::seeded_uniform({1, 2, 6, 6}, 0, 1, 18);
  Prng rng(42);
  for (int t = 0; t < 200; ++t) {
    TensorF out = augment(img, rng, 1.0, false);
    // without vflip the top row can only be the source top row (mirrored or
    // not), never the bottom row
    bool top_is_source_top =
        out.at({0, 0, 0, 0}) == img.at({0, 0, 0, 0}) ||
        out.at({0, 0, 0, 0}) == img.at({0, 0, 0, 5});
    CHECK(top_is_source_top);
  }
  // with vflip enabled, flipped outputs appear
  Prng rng3(43);
  bool saw_vflip = false;
  for (int t = 0; t < 200 && !saw_vflip; ++t) {
    TensorF out = augment(img, rng3, 1.0, true);
    if (out.at({0, 0, 0, 0}) == img.at({0, 0, 5, 0}) ||
        out.at({0, 0, 0, 0}) == img.at({0, 0, 5, 5}))
      saw_vflip = true;
  }
  CHECK(saw_vflip);
}

TEST_CASE("center_crop takes the central window") {
  TensorF img({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  TensorF out = center_crop(img, 2);
  CHECK(out == TensorF({1, 1, 2, 2}, {5, 6, 9, 10}));
  CHECK(center_crop(img, 4) == img);
  CHECK_THROWS_AS(center_crop(img, 5), Error);
}

TEST_CASE("preprocess subtracts per-channel means") {
  TensorF img({1, 2, 1, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  TensorF out = preprocess(img, {1.0f, 3.0f});
  CHECK(out == TensorF({1, 2, 1, 2}, {0.0f, 1.0f, 0.0f, 1.0f}));
  CHECK_THROWS_AS(preprocess(img, {1.0f}), Error);

  // zero-mean input stays put
  TensorF zero({1, 2, 1, 2});
  CHECK(preprocess(zero, {0.0f, 0.0f}) == zero);
}

TEST_CASE("channel means: subsets use only the requested samples") {
  LabeledDataset ds;
  ds.class_names = {"a", "b"};
  for (int i = 0; i < 2; ++i) {
    Sample s;
    s.image = TensorF::constant({1, 1, 2, 2}, i == 0 ? 1.0f : 3.0f);
    s.label = i;
    s.id = "s" + std::to_string(i);
    ds.samples.push_back(std::move(s));
  }
  CHECK(compute_channel_means(ds) == std::vector<float>{2.0f});
  CHECK(compute_channel_means(ds, {0}) == std::vector<float>{1.0f});
  CHECK(compute_channel_means(ds, {1}) == std::vector<float>{3.0f});

  LabeledDataset sub = subset(ds, {1});
  CHECK(sub.samples.size() == 1);
  CHECK(sub.channel_means == std::vector<float>{3.0f});
  CHECK(sub.class_names == ds.class_names);
}

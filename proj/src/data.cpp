#include "scnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace scnn {

namespace fs = std::filesystem;

namespace {

constexpr char kRawfMagic[4] = {'R', 'A', 'W', 'F'};

void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw Error(ErrorCode::truncated_file, "rawf: truncated header");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Tensor<float> read_pnm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw Error(ErrorCode::bad_data, "unreadable file: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5" && magic != "P6")
    throw Error(ErrorCode::bad_data,
                "unsupported image format in " + path.string());
  std::size_t channels = magic == "P6" ? 3 : 1;
  // header tokens may be separated by whitespace and '#' comments
  auto next_int = [&]() -> std::size_t {
    for (;;) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
    std::size_t v;
    if (!(f >> v))
      throw Error(ErrorCode::bad_data, "bad PNM header in " + path.string());
    return v;
  };
  std::size_t w = next_int();
  std::size_t h = next_int();
  std::size_t maxval = next_int();
  if (maxval == 0 || maxval > 255)
    throw Error(ErrorCode::bad_data,
                "only 8-bit PNM supported: " + path.string());
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(w * h * channels);
  f.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (!f)
    throw Error(ErrorCode::truncated_file,
                "truncated image data in " + path.string());
  Tensor<float> img({1, channels, h, w});
  float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img[(c * h + y) * w + x] =
            raw[(y * w + x) * channels + c] * scale;
  return img;
}

void write_pnm(const fs::path& path, const Tensor<float>& image) {
  Shape4 s = image.shape4();
  if (s.channels != 1 && s.channels != 3)
    throw Error(ErrorCode::bad_data, "PNM supports 1 or 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  f << (s.channels == 3 ? "P6" : "P5") << "\n"
    << s.width << " " << s.height << "\n255\n";
  std::vector<unsigned char> raw(s.width * s.height * s.channels);
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      for (std::size_t c = 0; c < s.channels; ++c) {
        float v = image[(c * s.height + y) * s.width + x];
        v = std::clamp(v, 0.0f, 1.0f);
        raw[(y * s.width + x) * s.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  f.write(reinterpret_cast<const char*>(raw.data()), raw.size());
  if (!f) throw Error(ErrorCode::io_failure, "write failed: " + path.string());
}

Tensor<float> read_rawf(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw Error(ErrorCode::bad_data, "unreadable file: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kRawfMagic, 4) != 0)
    throw Error(ErrorCode::bad_magic, "not a rawf file: " + path.string());
  std::size_t c = get_u32_le(f);
  std::size_t h = get_u32_le(f);
  std::size_t w = get_u32_le(f);
  Tensor<float> img({1, c, h, w});
  std::vector<unsigned char> raw(img.size() * 4);
  f.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (!f)
    throw Error(ErrorCode::truncated_file,
                "truncated rawf data in " + path.string());
  for (std::size_t i = 0; i < img.size(); ++i) {
    std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                         (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                         (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                         (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    img[i] = v;
  }
  return img;
}

void write_rawf(const fs::path& path, const Tensor<float>& image) {
  Shape4 s = image.shape4();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  f.write(kRawfMagic, 4);
  put_u32_le(f, static_cast<std::uint32_t>(s.channels));
  put_u32_le(f, static_cast<std::uint32_t>(s.height));
  put_u32_le(f, static_cast<std::uint32_t>(s.width));
  std::vector<unsigned char> raw(image.size() * 4);
  for (std::size_t i = 0; i < image.size(); ++i) {
    std::uint32_t bits;
    float v = image[i];
    std::memcpy(&bits, &v, 4);
    raw[4 * i] = static_cast<unsigned char>(bits);
    raw[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
    raw[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
    raw[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
  }
  f.write(reinterpret_cast<const char*>(raw.data()), raw.size());
  if (!f) throw Error(ErrorCode::io_failure, "write failed: " + path.string());
}

Tensor<float> read_image(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw Error(ErrorCode::bad_data, "unreadable file: " + path.string());
  char head[4] = {0};
  f.read(head, 4);
  f.close();
  if (std::memcmp(head, kRawfMagic, 4) == 0) return read_rawf(path);
  return read_pnm(path);
}

LabeledDataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root))
    throw Error(ErrorCode::bad_data,
                "dataset root is not a directory: " + root.string());
  LabeledDataset ds;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw Error(ErrorCode::bad_data,
                "no class subdirectories in " + root.string());
  std::size_t channels = 0;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const fs::path& dir = class_dirs[label];
    std::string class_name = dir.filename().string();
    ds.class_names.push_back(class_name);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw Error(ErrorCode::bad_data, "empty class directory: " + dir.string());
    for (const fs::path& file : files) {
      Sample s;
      s.image = read_image(file);
      s.label = static_cast<int>(label);
      s.id = class_name + "/" + file.filename().string();
      if (channels == 0)
        channels = s.image.shape()[1];
      else if (s.image.shape()[1] != channels)
        throw Error(ErrorCode::bad_data,
                    "inconsistent channel count in " + file.string());
      ds.samples.push_back(std::move(s));
    }
  }
  ds.channel_means = compute_channel_means(ds);
  return ds;
}

std::vector<float> compute_channel_means(
    const LabeledDataset& ds, const std::vector<std::size_t>& indices) {
  if (ds.samples.empty()) return {};
  std::size_t channels = ds.samples[0].image.shape()[1];
  std::vector<double> sums(channels, 0.0);
  std::vector<double> counts(channels, 0.0);
  auto accumulate = [&](const Sample& s) {
    Shape4 sh = s.image.shape4();
    std::size_t plane = sh.height * sh.width;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p)
        sums[c] += s.image[c * plane + p];
      counts[c] += static_cast<double>(plane);
    }
  };
  if (indices.empty())
    for (const Sample& s : ds.samples) accumulate(s);
  else
    for (std::size_t i : indices) accumulate(ds.samples.at(i));
  std::vector<float> means(channels);
  for (std::size_t c = 0; c < channels; ++c)
    means[c] = static_cast<float>(sums[c] / counts[c]);
  return means;
}

LabeledDataset subset(const LabeledDataset& ds,
                      const std::vector<std::size_t>& indices) {
  LabeledDataset out;
  out.class_names = ds.class_names;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(ds.samples.at(i));
  out.channel_means = compute_channel_means(out);
  return out;
}

Tensor<float> augment(const Tensor<float>& image, Prng& rng, double crop_ratio,
                      bool allow_vflip) {
  if (crop_ratio <= 0 || crop_ratio > 1)
    throw Error(ErrorCode::bad_config, "augment: crop_ratio must be in (0,1]");
  Shape4 s = image.shape4();
  bool hflip = rng.next_double() < 0.5;
  bool vflip = allow_vflip && rng.next_double() < 0.5;
  std::size_t ch = static_cast<std::size_t>(
      std::lround(crop_ratio * static_cast<double>(s.height)));
  std::size_t cw = static_cast<std::size_t>(
      std::lround(crop_ratio * static_cast<double>(s.width)));
  ch = std::max<std::size_t>(1, std::min(ch, s.height));
  cw = std::max<std::size_t>(1, std::min(cw, s.width));
  std::size_t top =
      s.height == ch ? 0 : rng.next_below(s.height - ch + 1);
  std::size_t left = s.width == cw ? 0 : rng.next_below(s.width - cw + 1);
  Tensor<float> out = crop_flip(image, CropWindow{top, left, ch, cw}, hflip);
  if (vflip) {
    Tensor<float> flipped(out.shape());
    Shape4 os = out.shape4();
    for (std::size_t n = 0; n < os.batch; ++n)
      for (std::size_t c = 0; c < os.channels; ++c)
        for (std::size_t y = 0; y < os.height; ++y)
          std::copy(
              out.data() + ((n * os.channels + c) * os.height + y) * os.width,
              out.data() +
                  ((n * os.channels + c) * os.height + y + 1) * os.width,
              flipped.data() +
                  ((n * os.channels + c) * os.height + (os.height - 1 - y)) *
                      os.width);
    out = std::move(flipped);
  }
  return out;
}

Tensor<float> center_crop(const Tensor<float>& image, std::size_t side) {
  Shape4 s = image.shape4();
  if (side > s.height || side > s.width)
    throw Error(ErrorCode::out_of_bounds, "center_crop: side exceeds image");
  std::size_t top = (s.height - side) / 2;
  std::size_t left = (s.width - side) / 2;
  return crop_flip(image, CropWindow{top, left, side, side}, false);
}

Tensor<float> preprocess(const Tensor<float>& image,
                         const std::vector<float>& channel_means) {
  Shape4 s = image.shape4();
  if (s.channels != channel_means.size())
    throw Error(ErrorCode::shape_mismatch,
                "preprocess: channel count mismatch");
  Tensor<float> out = image;
  std::size_t plane = s.height * s.width;
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t c = 0; c < s.channels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        out[(n * s.channels + c) * plane + p] -= channel_means[c];
  return out;
}

FoldSplit make_folds(const LabeledDataset& ds, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::bad_config, "make_folds: k must be >= 2");
  std::map<int, std::vector<std::string>> by_class;
  for (const Sample& s : ds.samples) by_class[s.label].push_back(s.id);
  FoldSplit folds;
  folds.k = k;
  for (auto& [label, ids] : by_class) {
    if (ids.size() < static_cast<std::size_t>(k))
      throw Error(ErrorCode::class_too_small,
                  "make_folds: class " + std::to_string(label) + " has only " +
                      std::to_string(ids.size()) + " samples for k=" +
                      std::to_string(k));
    // Fisher-Yates with the class-indexed stream keeps folds reproducible
    Prng rng(seed, derive_stream(0xf01d5u, static_cast<std::uint64_t>(label)));
    for (std::size_t i = ids.size() - 1; i > 0; --i)
      std::swap(ids[i], ids[rng.next_below(i + 1)]);
    for (std::size_t i = 0; i < ids.size(); ++i)
      folds.assignment[ids[i]] = static_cast<int>(i % k);
  }
  return folds;
}

void save_folds(const fs::path& path, const FoldSplit& folds) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  f << "sample_id,fold\n";
  for (const auto& [id, fold] : folds.assignment) f << id << "," << fold << "\n";
}

FoldSplit load_folds(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::bad_data, "cannot read " + path.string());
  FoldSplit folds;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::size_t comma = line.rfind(',');
    if (comma == std::string::npos)
      throw Error(ErrorCode::bad_data, "bad fold line: " + line);
    int fold = std::stoi(line.substr(comma + 1));
    folds.assignment[line.substr(0, comma)] = fold;
    folds.k = std::max(folds.k, fold + 1);
  }
  return folds;
}

std::vector<std::size_t> fold_indices(const LabeledDataset& ds,
                                      const FoldSplit& folds, int fold,
                                      bool in_fold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    auto it = folds.assignment.find(ds.samples[i].id);
    if (it == folds.assignment.end())
      throw Error(ErrorCode::bad_data,
                  "fold split does not cover sample " + ds.samples[i].id);
    if ((it->second == fold) == in_fold) out.push_back(i);
  }
  return out;
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  LabeledDataset ds;
  std::size_t size = spec.image_size;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::ostringstream name;
    name << "class_" << (c < 10 ? "0" : "") << c;
    ds.class_names.push_back(name.str());
  }
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
    std::size_t gen_id = cls + spec.class_offset;
    // class-conditional texture parameters; distinct per generator id
    double angle = std::numbers::pi * static_cast<double>(gen_id) /
                   static_cast<double>(spec.num_classes + spec.class_offset +
                                       1);
    double freq = 3.0 + 2.0 * static_cast<double>(gen_id % 3);
    std::size_t blobs = 1 + gen_id % 4;
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      Prng rng(spec.seed, derive_stream(0x5e17u, gen_id, s));
      double phase = rng.uniform(0, 2 * std::numbers::pi);
      std::vector<std::pair<double, double>> blob_pos;
      std::vector<double> blob_amp;
      for (std::size_t b = 0; b < blobs; ++b) {
        blob_pos.push_back({rng.uniform(0.15, 0.85) * size,
                            rng.uniform(0.15, 0.85) * size});
        blob_amp.push_back((b % 2 ? -0.3 : 0.3) + rng.uniform(-0.05, 0.05));
      }
      Tensor<float> img({1, spec.channels, size, size});
      std::size_t plane = size * size;
      for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        double ch_phase = phase + 0.7 * static_cast<double>(ch);
        double mean = 0;
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            double u = (std::cos(angle) * x + std::sin(angle) * y) /
                       static_cast<double>(size);
            double v = 0.25 * std::sin(2 * std::numbers::pi * freq * u +
                                       ch_phase);
            for (std::size_t b = 0; b < blobs; ++b) {
              double dx = (static_cast<double>(x) - blob_pos[b].first) /
                          (0.08 * size);
              double dy = (static_cast<double>(y) - blob_pos[b].second) /
                          (0.08 * size);
              v += blob_amp[b] * std::exp(-(dx * dx + dy * dy));
            }
            v += rng.uniform(-spec.noise_level, spec.noise_level);
            img[ch * plane + y * size + x] = static_cast<float>(v);
            mean += v;
          }
        // exact per-channel mean matching across classes: every image ends
        // up with channel mean 0.5
        float shift = static_cast<float>(0.5 - mean / static_cast<double>(
                                                         plane));
        for (std::size_t p = 0; p < plane; ++p) img[ch * plane + p] += shift;
      }
      Sample sample;
      sample.image = std::move(img);
      sample.label = static_cast<int>(cls);
      std::ostringstream id;
      id << ds.class_names[cls] << "/img_" << (s < 10 ? "0" : "") << s
         << ".rawf";
      sample.id = id.str();
      ds.samples.push_back(std::move(sample));
    }
  }
  ds.channel_means = compute_channel_means(ds);
  return ds;
}

void write_dataset(const LabeledDataset& ds, const fs::path& root) {
  fs::create_directories(root);
  for (const Sample& s : ds.samples) {
    fs::path file = root / s.id;
    fs::create_directories(file.parent_path());
    write_rawf(file, s.image);
  }
}

}  // namespace scnn

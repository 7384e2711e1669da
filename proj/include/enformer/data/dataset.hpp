#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>

#include "enformer/data/augment.hpp"
#include "enformer/io/image_io.hpp"

// Dataset layout: <root>/<dataset>/{images,masks}/<name>.{png,jpg}. Scanning
// pairs files by stem, sorted by filename; the train/val split shuffles with
// a seeded generator and rounds n·ratio. The split manifest is a text file of
// `<dataset>/<filename>,<train|val>` lines.

namespace enformer {

inline constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

struct SampleRef {
  std::string dataset, filename;  // filename keeps the image extension
  std::string image_path, mask_path;
  std::string id() const { return dataset + "/" + filename; }
};

namespace detail {

inline bool image_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

inline std::map<std::string, std::filesystem::path> stems_of(const std::filesystem::path& dir,
                                                             std::vector<std::string>& duplicates) {
  std::map<std::string, std::filesystem::path> out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && image_ext(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files)
    if (!out.emplace(p.stem().string(), p).second) duplicates.push_back(p.filename().string());
  return out;
}

}  // namespace detail

inline std::vector<SampleRef> scan_dataset(const std::string& root, const std::string& name) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(root) / name;
  fs::path images = base / "images", masks = base / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw std::runtime_error("dataset '" + name + "': expected images/ and masks/ under " + base.string());
  std::vector<std::string> problems;
  std::vector<std::string> dup_i, dup_m;
  auto image_stems = detail::stems_of(images, dup_i);
  auto mask_stems = detail::stems_of(masks, dup_m);
  for (const auto& f : dup_i) problems.push_back("duplicate image stem: " + f);
  for (const auto& f : dup_m) problems.push_back("duplicate mask stem: " + f);
  std::vector<SampleRef> out;
  for (const auto& [stem, ipath] : image_stems) {
    auto it = mask_stems.find(stem);
    if (it == mask_stems.end()) {
      problems.push_back("image without mask: " + ipath.filename().string());
      continue;
    }
    out.push_back({name, ipath.filename().string(), ipath.string(), it->second.string()});
  }
  for (const auto& [stem, mpath] : mask_stems)
    if (!image_stems.count(stem)) problems.push_back("mask without image: " + mpath.filename().string());
  if (!problems.empty()) {
    std::string msg = "dataset '" + name + "' has unpaired files:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::runtime_error(msg);
  }
  std::sort(out.begin(), out.end(), [](const SampleRef& a, const SampleRef& b) { return a.filename < b.filename; });
  return out;
}

inline std::pair<std::vector<SampleRef>, std::vector<SampleRef>> train_val_split(std::vector<SampleRef> samples,
                                                                                 double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie strictly inside (0,1)");
  Rng rng(seed);
  rng.shuffle(samples.begin(), samples.end());
  auto n_train = static_cast<size_t>(std::llround(static_cast<double>(samples.size()) * ratio));
  n_train = std::min(n_train, samples.size());
  std::vector<SampleRef> train(samples.begin(), samples.begin() + static_cast<int64_t>(n_train));
  std::vector<SampleRef> val(samples.begin() + static_cast<int64_t>(n_train), samples.end());
  return {std::move(train), std::move(val)};
}

inline void write_split_manifest(std::ostream& os, const std::vector<SampleRef>& train,
                                 const std::vector<SampleRef>& val) {
  auto emit = [&](std::vector<SampleRef> group, const char* tag) {
    std::sort(group.begin(), group.end(), [](const SampleRef& a, const SampleRef& b) { return a.id() < b.id(); });
    for (const auto& s : group) os << s.id() << "," << tag << "\n";
  };
  emit(train, "train");
  emit(val, "val");
}

inline void write_split_manifest_file(const std::string& path, const std::vector<SampleRef>& train,
                                      const std::vector<SampleRef>& val) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write split manifest '" + path + "'");
  write_split_manifest(os, train, val);
}

// id -> "train" | "val"
inline std::map<std::string, std::string> read_split_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read split manifest '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto comma = line.rfind(',');
    std::string tag = comma == std::string::npos ? "" : line.substr(comma + 1);
    if (tag != "train" && tag != "val")
      throw std::runtime_error("split manifest '" + path + "' line " + std::to_string(lineno) +
                               ": expected `<dataset>/<filename>,<train|val>`");
    out[line.substr(0, comma)] = tag;
  }
  return out;
}

inline std::pair<std::vector<SampleRef>, std::vector<SampleRef>> split_from_manifest(
    const std::vector<SampleRef>& samples, const std::string& manifest_path) {
  auto tags = read_split_manifest(manifest_path);
  std::pair<std::vector<SampleRef>, std::vector<SampleRef>> out;
  for (const auto& s : samples) {
    auto it = tags.find(s.id());
    if (it == tags.end()) throw std::runtime_error("sample " + s.id() + " is missing from the split manifest");
    (it->second == "train" ? out.first : out.second).push_back(s);
  }
  return out;
}

inline RawSample load_sample(const SampleRef& ref) {
  RawSample s{load_image_rgb(ref.image_path), load_mask_gray(ref.mask_path), ref.id()};
  s.check_paired(("sample " + ref.id()).c_str());
  return s;
}

// Model-ready pair: standardized image channels, binary mask, source size kept.
template <typename T>
struct ModelSample {
  Tensor<T> image;  // (3,S,S), ImageNet-standardized
  Tensor<T> mask;   // (S,S), values in {0,1}
  int64_t orig_h = 0, orig_w = 0;
  std::string source_id;
};

template <typename T>
inline ModelSample<T> normalize_resize(const RawSample& raw, int64_t size = 352) {
  raw.check_paired("normalize_resize");
  ModelSample<T> out;
  out.orig_h = raw.image.h;
  out.orig_w = raw.image.w;
  out.source_id = raw.source_id;
  out.image = image_to_float01<T>(resize_bilinear(raw.image, size, size));
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t i = 0; i < size * size; ++i) {
      auto& v = out.image[ch * size * size + i];
      v = (v - static_cast<T>(kImagenetMean[ch])) / static_cast<T>(kImagenetStd[ch]);
    }
  ByteImage m = binarize_mask(resize_nearest(raw.mask, size, size));
  out.mask = Tensor<T>({size, size});
  for (int64_t i = 0; i < size * size; ++i) out.mask[i] = static_cast<T>(m.px[static_cast<size_t>(i)]);
  return out;
}

template <typename T>
inline Tensor<T> stack_images(const std::vector<ModelSample<T>>& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_images: empty batch");
  int64_t s = batch[0].image.dim(1);
  Tensor<T> out({static_cast<int64_t>(batch.size()), 3, s, s});
  for (size_t n = 0; n < batch.size(); ++n) {
    check_same_shape(batch[n].image, batch[0].image, "stack_images");
    std::copy(batch[n].image.vec().begin(), batch[n].image.vec().end(), out.vec().begin() + n * 3 * s * s);
  }
  return out;
}

template <typename T>
inline Tensor<T> stack_masks(const std::vector<ModelSample<T>>& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_masks: empty batch");
  int64_t s = batch[0].mask.dim(0);
  Tensor<T> out({static_cast<int64_t>(batch.size()), 1, s, s});
  for (size_t n = 0; n < batch.size(); ++n) {
    check_same_shape(batch[n].mask, batch[0].mask, "stack_masks");
    std::copy(batch[n].mask.vec().begin(), batch[n].mask.vec().end(), out.vec().begin() + n * s * s);
  }
  return out;
}

}  // namespace enformer

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "scn/data.hpp"
#include "scn/random.hpp"

namespace scn {
namespace {

namespace fs = std::filesystem;

bool is_number(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm" || ext == ".jpg" || ext == ".jpeg";
}

Tensor finish_image(const Tensor& raw, std::size_t target) {
  if (target == 0) return to_grayscale(raw);
  return preprocess(raw, target);
}

template <class T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct BlobParams {
  double cx, cy, sigma, amp;
};

std::vector<BlobParams> subject_blobs(int subject, std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(subject)));
  std::vector<BlobParams> blobs(2);
  for (auto& b : blobs) {
    b.cx = rng.uniform(25.0, 75.0);
    b.cy = rng.uniform(25.0, 75.0);
    b.sigma = rng.uniform(6.0, 14.0);
    b.amp = rng.uniform(0.5, 1.0);
  }
  return blobs;
}

// Blob coordinates are given on a 100-pixel canvas and scaled to image_size.
Tensor render_blobs(const std::vector<BlobParams>& blobs, std::size_t image_size) {
  const double s = static_cast<double>(image_size) / 100.0;
  std::vector<double> px(image_size * image_size, 0.0);
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      double v = 0.0;
      for (const auto& b : blobs) {
        const double dx = (static_cast<double>(x) + 0.5) / s - b.cx;
        const double dy = (static_cast<double>(y) + 0.5) / s - b.cy;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      px[y * image_size + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Tensor(Shape{1, image_size, image_size}, std::move(px));
}

}  // namespace

std::vector<int> FaceDataset::subjects() const {
  std::set<int> ids;
  for (const auto& img : images) ids.insert(img.subject_id);
  return {ids.begin(), ids.end()};
}

FaceDataset load_orl(const fs::path& dir, std::size_t target) {
  if (!fs::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  FaceDataset ds;
  ds.source = DatasetSource::att;
  std::vector<std::pair<std::pair<int, int>, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.size() < 2 || name[0] != 's' || !is_number(name.substr(1))) continue;
    const int subject = std::stoi(name.substr(1));
    for (const auto& f : fs::directory_iterator(entry.path())) {
      if (f.path().extension() != ".pgm" || !is_number(f.path().stem().string())) continue;
      files.push_back({{subject, std::stoi(f.path().stem().string())}, f.path()});
    }
  }
  if (files.empty()) throw Error("no ORL images (s<subject>/<index>.pgm) under " + dir.string());
  std::sort(files.begin(), files.end());
  for (const auto& [key, path] : files) {
    ds.images.push_back({key.first, key.second, finish_image(load_image_file(path), target)});
  }
  return ds;
}

FaceDataset load_lfw(const fs::path& dir, std::size_t target) {
  if (!fs::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  std::vector<fs::path> subjects;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) subjects.push_back(entry.path());
  }
  std::sort(subjects.begin(), subjects.end());
  FaceDataset ds;
  ds.source = DatasetSource::lfw;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(subjects[s])) {
      if (f.is_regular_file() && is_image_file(f.path())) files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      ds.images.push_back(
          {static_cast<int>(s + 1), static_cast<int>(i + 1), finish_image(load_image_file(files[i]), target)});
    }
  }
  if (ds.images.empty()) throw Error("no images found under " + dir.string());
  return ds;
}

Tensor synth_template(int subject, std::uint64_t seed, std::size_t image_size) {
  return render_blobs(subject_blobs(subject, seed), image_size);
}

FaceDataset synth_dataset(std::size_t n_subjects, std::size_t n_per_subject, std::uint64_t seed,
                          std::size_t image_size) {
  FaceDataset ds;
  ds.source = DatasetSource::synthetic;
  for (std::size_t s = 1; s <= n_subjects; ++s) {
    const auto base = subject_blobs(static_cast<int>(s), seed);
    for (std::size_t i = 1; i <= n_per_subject; ++i) {
      SplitMix64 rng(mix_seed(mix_seed(seed, s), 1000 + i));
      const double tx = rng.uniform(-3.0, 3.0);
      const double ty = rng.uniform(-3.0, 3.0);
      const double angle = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
      const double ca = std::cos(angle), sa = std::sin(angle);
      auto blobs = base;
      for (auto& b : blobs) {
        const double dx = b.cx - 50.0, dy = b.cy - 50.0;
        b.cx = 50.0 + ca * dx - sa * dy + tx;
        b.cy = 50.0 + sa * dx + ca * dy + ty;
      }
      ds.images.push_back({static_cast<int>(s), static_cast<int>(i), render_blobs(blobs, image_size)});
    }
  }
  return ds;
}

SplitSpec split_subjects(const FaceDataset& ds, std::size_t n_holdout, std::uint64_t seed) {
  auto subjects = ds.subjects();
  if (n_holdout >= subjects.size()) {
    throw Error("holdout of " + std::to_string(n_holdout) + " subjects leaves no training subjects (have " +
                std::to_string(subjects.size()) + ")");
  }
  SplitMix64 rng(seed);
  shuffle(subjects, rng);
  SplitSpec spec;
  spec.seed = seed;
  spec.test_subjects.assign(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  spec.train_subjects.assign(subjects.begin() + static_cast<std::ptrdiff_t>(n_holdout), subjects.end());
  std::sort(spec.test_subjects.begin(), spec.test_subjects.end());
  std::sort(spec.train_subjects.begin(), spec.train_subjects.end());
  return spec;
}

std::vector<SplitSpec> kfold(const FaceDataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("k must be >= 2");
  auto subjects = ds.subjects();
  if (k > subjects.size()) throw Error("k exceeds the number of subjects");
  SplitMix64 rng(seed);
  shuffle(subjects, rng);
  std::vector<SplitSpec> folds(k);
  const std::size_t base = subjects.size() / k, extra = subjects.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      auto& side = (i >= pos && i < pos + len) ? folds[f].test_subjects : folds[f].train_subjects;
      side.push_back(subjects[i]);
    }
    std::sort(folds[f].test_subjects.begin(), folds[f].test_subjects.end());
    std::sort(folds[f].train_subjects.begin(), folds[f].train_subjects.end());
    folds[f].seed = seed;
    pos += len;
  }
  return folds;
}

std::vector<PairIndex> sample_pair_indices(const FaceDataset& ds, std::span<const int> subjects, std::size_t n_pairs,
                                           double pos_ratio, std::uint64_t seed) {
  if (!(pos_ratio >= 0.0 && pos_ratio <= 1.0)) throw Error("pos_ratio must lie in [0, 1]");
  std::map<int, std::vector<std::size_t>> by_subject;
  for (int s : subjects) by_subject[s];
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    auto it = by_subject.find(ds.images[i].subject_id);
    if (it != by_subject.end()) it->second.push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> pools;
  for (const auto& [id, imgs] : by_subject) {
    if (!imgs.empty()) pools.push_back(&imgs);
  }

  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n_pairs) * pos_ratio));
  const std::size_t n_neg = n_pairs - n_pos;
  const bool any_pair_subject =
      std::any_of(pools.begin(), pools.end(), [](const auto* p) { return p->size() >= 2; });
  if (n_pos > 0 && !any_pair_subject) throw Error("no subject has two images for a matching pair");
  if (n_neg > 0 && pools.size() < 2) throw Error("non-matching pairs need at least two subjects with images");

  SplitMix64 rng(seed);
  std::vector<PairIndex> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pos; ++k) {
    const std::vector<std::size_t>* pool;
    do {
      pool = pools[rng.below(pools.size())];
    } while (pool->size() < 2);  // resample subjects with a single image
    const std::size_t a = rng.below(pool->size());
    std::size_t b = rng.below(pool->size() - 1);
    if (b >= a) ++b;
    pairs.push_back({(*pool)[a], (*pool)[b], 0});
  }
  for (std::size_t k = 0; k < n_neg; ++k) {
    const std::size_t s1 = rng.below(pools.size());
    std::size_t s2 = rng.below(pools.size() - 1);
    if (s2 >= s1) ++s2;
    const auto& p1 = *pools[s1];
    const auto& p2 = *pools[s2];
    pairs.push_back({p1[rng.below(p1.size())], p2[rng.below(p2.size())], 1});
  }
  shuffle(pairs, rng);
  return pairs;
}

PairBatch make_batch(const FaceDataset& ds, std::span<const PairIndex> pairs) {
  if (pairs.empty()) throw Error("make_batch: no pairs");
  const Shape img_shape = ds.images.at(pairs[0].left).image.shape();
  const std::size_t plane = numel(img_shape);
  std::vector<double> left(pairs.size() * plane), right(pairs.size() * plane);
  PairBatch batch;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor& a = ds.images.at(pairs[i].left).image;
    const Tensor& b = ds.images.at(pairs[i].right).image;
    if (a.shape() != img_shape || b.shape() != img_shape) throw Error("make_batch: images differ in size");
    std::copy(a.data().begin(), a.data().end(), left.begin() + static_cast<std::ptrdiff_t>(i * plane));
    std::copy(b.data().begin(), b.data().end(), right.begin() + static_cast<std::ptrdiff_t>(i * plane));
    batch.labels.push_back(pairs[i].label);
  }
  Shape batch_shape{pairs.size()};
  batch_shape.insert(batch_shape.end(), img_shape.begin(), img_shape.end());
  batch.left = Tensor(batch_shape, std::move(left));
  batch.right = Tensor(batch_shape, std::move(right));
  return batch;
}

PairBatch sample_pairs(const FaceDataset& ds, std::span<const int> subjects, std::size_t n_pairs, double pos_ratio,
                       std::uint64_t seed) {
  const auto idx = sample_pair_indices(ds, subjects, n_pairs, pos_ratio, seed);
  return make_batch(ds, idx);
}

}  // namespace scn

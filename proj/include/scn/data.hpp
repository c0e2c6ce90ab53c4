#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scn/tensor.hpp"

namespace scn {

enum class DatasetSource { att, lfw, synthetic };

struct FaceImage {
  int subject_id = 0;
  int image_index = 0;
  Tensor image;  // [1, H, W] in [0, 1]
};

struct FaceDataset {
  std::vector<FaceImage> images;
  DatasetSource source = DatasetSource::synthetic;

  /// Sorted distinct subject ids.
  std::vector<int> subjects() const;
};

struct SplitSpec {
  std::vector<int> train_subjects;
  std::vector<int> test_subjects;
  std::uint64_t seed = 0;
};

struct PairIndex {
  std::size_t left = 0;   // index into FaceDataset::images
  std::size_t right = 0;
  int label = 0;          // 0 = same subject
};

struct PairBatch {
  Tensor left;   // [N, 1, H, W]
  Tensor right;  // [N, 1, H, W]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

enum class ImageErrorCode { bad_magic, bad_header, zero_maxval, bad_maxval, truncated, bad_pixel, io, unsupported };

class ImageError : public Error {
 public:
  ImageError(ImageErrorCode code, const std::string& what) : Error(what), code_(code) {}
  ImageErrorCode code() const { return code_; }

 private:
  ImageErrorCode code_;
};

/// Parses binary (P5) or ASCII (P2) PGM; values are raw / maxval.
Tensor load_pgm(std::span<const std::uint8_t> bytes);
/// Parses binary (P6) or ASCII (P3) PPM into [3, H, W].
Tensor load_ppm(std::span<const std::uint8_t> bytes);
/// Loads .pgm, .ppm/.pnm or .jpg/.jpeg (when built with libjpeg) into [C, H, W].
Tensor load_image_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_pgm(const Tensor& image, bool binary = true, unsigned maxval = 255);

/// Luma 0.299 R + 0.587 G + 0.114 B for [3, H, W]; [1, H, W] passes through.
Tensor to_grayscale(const Tensor& image);

/// Bilinear resize of [H, W] planes with half-pixel centers.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Grayscale, then resize to target x target.
Tensor preprocess(const Tensor& image, std::size_t target = 100);

/// ORL layout: dir/s{subject}/{index}.pgm. target 0 keeps the native size.
FaceDataset load_orl(const std::filesystem::path& dir, std::size_t target = 100);
/// One directory per subject holding that subject's images, in sorted order.
FaceDataset load_lfw(const std::filesystem::path& dir, std::size_t target = 100);

FaceDataset synth_dataset(std::size_t n_subjects, std::size_t n_per_subject, std::uint64_t seed,
                          std::size_t image_size = 100);
/// Unjittered base image of a synthetic subject.
Tensor synth_template(int subject, std::uint64_t seed, std::size_t image_size = 100);

SplitSpec split_subjects(const FaceDataset& ds, std::size_t n_holdout, std::uint64_t seed);
std::vector<SplitSpec> kfold(const FaceDataset& ds, std::size_t k, std::uint64_t seed);

std::vector<PairIndex> sample_pair_indices(const FaceDataset& ds, std::span<const int> subjects, std::size_t n_pairs,
                                           double pos_ratio, std::uint64_t seed);
PairBatch make_batch(const FaceDataset& ds, std::span<const PairIndex> pairs);
PairBatch sample_pairs(const FaceDataset& ds, std::span<const int> subjects, std::size_t n_pairs, double pos_ratio,
                       std::uint64_t seed);

}  // namespace scn

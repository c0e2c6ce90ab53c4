#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scn/optim.hpp"
#include "scn/siamese.hpp"
#include "scn/tensor.hpp"

namespace scn {

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

/// Layout: magic, u16 version, u32 count, then per tensor u16 name length,
/// name bytes, u8 rank, u32 dims, f64 values; all little-endian. A trailing
/// CRC32 covers every byte before it.
std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Model tensors (learnables then buffers), followed by optim/m/*, optim/v/*,
/// optim/vhat/* and optim/t when the optimizer has taken a step.
std::vector<CheckpointEntry> checkpoint_entries(const ModelParams& params, const OptimState* state = nullptr);

void save_checkpoint(const ModelParams& params, const OptimState* state, const std::filesystem::path& path);

/// Fills `params` (which fixes the expected layout) and, when given, `state`.
/// A missing or differently shaped tensor is reported by name.
void restore_checkpoint(std::span<const CheckpointEntry> entries, ModelParams& params, OptimState* state = nullptr);
void load_checkpoint(const std::filesystem::path& path, ModelParams& params, OptimState* state = nullptr);

}  // namespace scn

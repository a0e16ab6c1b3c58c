#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ernn/quantize.hpp"
#include "ernn/rnn_cells.hpp"

namespace ernn::io {

inline constexpr std::uint16_t kFormatVersion = 1;

/// Everything a model file carries. Weights are stored as time-domain
/// generators; spectra are recomputed on load.
struct ModelFile {
  rnn::ModelParams model;
  std::optional<quant::QuantPlan> quant_plan;
  /// Weight-spectrum codes, one per plan matrix. Empty without a plan.
  std::vector<quant::QuantizedTensor> quant_codes;
};

/// Attaches a plan and the weight codes it produces.
ModelFile with_quantization(rnn::ModelParams model, quant::QuantPlan plan);

/// Layout, all integers little-endian:
///   "ERNN" | u16 version | u32 header length | header text |
///   u32 payload length | payload | u32 crc32(header text + payload)
/// The header text is a readable summary regenerated from the payload.
std::vector<std::uint8_t> serialize(const ModelFile& file);

/// Throws FormatError on bad magic, version, length, checksum or layout.
ModelFile deserialize(std::span<const std::uint8_t> bytes);

void write_model_file(const std::filesystem::path& path, const ModelFile& file);
ModelFile read_model_file(const std::filesystem::path& path);

}  // namespace ernn::io

#pragma once

#include <stdexcept>

#include "fot/container.hpp"
#include "fot/entropy_model.hpp"
#include "fot/image.hpp"
#include "fot/model.hpp"

namespace fot {

/// Container/checkpoint model-id disagreement (CLI exit code 4).
struct ModelMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Quantized coding tables: one Gaussian context per scale-table entry
/// (shared by all splits) and one factorized table per split.
struct CodingTables {
  GaussianConditional gc;
  CdfTable y_table;
  std::array<CdfTable, 3> z_tables;
};

CodingTables build_coding_tables(const CodecModel& model);

/// Uses the checkpoint's embedded "cdf/..." records when present, otherwise
/// rebuilds from the model parameters (both paths are deterministic).
CodingTables tables_from_checkpoint(const CodecModel& model, const Checkpoint& ckpt);

/// Full pipeline: pad, sample, decompose, hyper-encode, round-quantize,
/// range-ANS code each enabled split into its container slot. The output
/// bytes are deterministic; `parallel` encodes the six substreams
/// concurrently with identical results.
CompressedContainer encode_image(const CodecModel& model, const CodingTables& tables,
                                 const ImageBuffer& img, const SplitMask& mask,
                                 bool parallel = false);

/// Inverse pipeline for the requested subset of the stored splits.
ImageBuffer decode_image(const CodecModel& model, const CodingTables& tables,
                         const CompressedContainer& container, const SplitMask& mask);

/// The model's direct round-mode forward pass exported to 8 bits; byte-equal
/// to an encode/decode round trip with the same mask.
ImageBuffer roundtrip_reference(const CodecModel& model, const ImageBuffer& img,
                                const SplitMask& mask);

}  // namespace fot

#pragma once

#include <string>

#include "rsmoe/moe.hpp"

namespace rsmoe {

// Checkpoint layout, all little endian:
//   line 1: rsmoe-checkpoint-v1
//   line 2: checksum=<16 hex chars>, fnv1a over every byte after this line
//   header: kind/stage/vocab/roles/config and a tensor table with
//           name, shape and trainability per entry, ending with payload_bytes
//   payload: the tensors' doubles back to back in table order
// Adapters must be merged before saving; the table carries no adapter rows.
// A wrong magic or an unknown kind raises CheckpointError, a checksum or size
// mismatch raises IntegrityError.

void save_caption_model(const std::string& path, const CaptionModel& m, const Vocab& v,
                        const std::string& stage_tag);
CaptionModel load_caption_model(const std::string& path, Vocab& vocab_out,
                                std::string& stage_out);

void save_moe_model(const std::string& path, const MoeModel& m, const Vocab& v,
                    const std::string& stage_tag);
MoeModel load_moe_model(const std::string& path, Vocab& vocab_out, std::string& stage_out);

// Peeks at the header and returns the stored kind ("caption" or "moe").
std::string checkpoint_kind(const std::string& path);

}  // namespace rsmoe

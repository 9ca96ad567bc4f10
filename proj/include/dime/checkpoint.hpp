#ifndef DIME_CHECKPOINT_HPP
#define DIME_CHECKPOINT_HPP

#include "dime/config.hpp"

namespace dime {

// Checkpoint file layout (all integers little-endian):
//   bytes 0-3   magic "DIME"
//   bytes 4-7   u32 schema version (1)
//   bytes 8-15  u64 header length in bytes
//   header      UTF-8 text:
//                 config <key> <value>
//                 meta iteration <n>
//                 meta rng_state <engine state>        (optional)
//                 tensor <name> f32 <d0>x<d1>x... <offset> <bytes>
//   data        raw float32 little-endian blocks at the listed offsets
//               (relative to the end of the header)
struct CheckpointMeta {
    int64_t iteration = 0;
    std::string rng_state;
};

void save_checkpoint(const DimeNet<float>& model, const Config& cfg, const CheckpointMeta& meta,
                     const std::string& path);

// Rebuilds the model from the stored config snapshot. When `requested` is
// given, architecture keys the caller set explicitly must match the
// snapshot; differing keys raise CheckpointError(ConfigMismatch).
DimeNet<float> load_checkpoint(const std::string& path, const Config* requested = nullptr,
                               Config* cfg_out = nullptr, CheckpointMeta* meta_out = nullptr);

}  // namespace dime

#endif

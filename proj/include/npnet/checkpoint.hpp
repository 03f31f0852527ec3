#ifndef NPNET_CHECKPOINT_HPP
#define NPNET_CHECKPOINT_HPP

#include <string>

#include "npnet/model.hpp"

namespace npnet {

// Binary checkpoint: magic "NPNT", u32 version (1), length-prefixed
// config block of key=value lines, u32 tensor count, then per tensor:
// u16-length-prefixed name, dtype byte (0 = f32), u32 ndim, u32 dims,
// raw little-endian values. Parameters first, then batchnorm running
// statistics, in registration order, so save -> load -> save is
// byte-identical.
void save_checkpoint(const Model& model, const std::string& path);

// Rebuilds the model from the stored config and restores every tensor.
// Throws CheckpointError with a distinct message for bad magic,
// unsupported version, and truncated payloads.
Model load_checkpoint(const std::string& path);

}  // namespace npnet

#endif

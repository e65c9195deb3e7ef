#ifndef CBT_CHECKPOINT_HPP
#define CBT_CHECKPOINT_HPP

#include <cstdint>
#include <optional>
#include <string>

#include "cbt/adam.hpp"
#include "cbt/model.hpp"

namespace cbt {

struct CheckpointMeta {
  uint64_t seed = 0;
  uint64_t step = 0;
  uint32_t layer_k = 4;
  uint32_t width = 0;
  uint32_t height = 0;
};

// Little-endian binary container: magic "CBTN", format version, the full
// network config, run metadata, every named tensor (weights plus batch-norm
// running stats), and optionally the Adam state. Written to a temp file and
// renamed into place so readers never observe a partial file.
void save_checkpoint(const std::string& path, const CbtNet& net,
                     const CheckpointMeta& meta,
                     const AdamStateF* adam = nullptr);

struct LoadedCheckpoint {
  CbtNetConfig config;
  CheckpointMeta meta;
  CbtNet net;
  std::optional<AdamStateF> adam;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cbt

#endif

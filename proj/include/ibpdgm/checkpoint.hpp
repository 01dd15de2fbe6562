#pragma once

// Model checkpoints: a text manifest at `path` and a raw blob at `path.bin`.
// See docs/formats.md.

#include <stdexcept>
#include <string>

#include "ibpdgm/model.hpp"

namespace ibpdgm {

inline constexpr const char* kCheckpointFormat = "IBPDGM-1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const IbpDgm& m);
IbpDgm load_checkpoint(const std::string& path);

}  // namespace ibpdgm

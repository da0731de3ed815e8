// Parameter checkpoints: a single binary file mapping parameter names to
// shape plus row-major 64-bit values.
//
// Layout (little endian):
//   magic   "NDCKPT\0\0"           8 bytes
//   version u32                    currently 1
//   count   u64
//   entries: name_len u32, name bytes, rows u64, cols u64,
//            rows*cols doubles in row-major order

#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace ompn {

using NamedParams = std::vector<std::pair<std::string, Eigen::MatrixXd>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const NamedParams& params);
NamedParams load_checkpoint(const std::string& path);

}  // namespace ompn

#include "pcreid/lpc.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace pcreid {

namespace {
constexpr char kMagic[4] = {'L', 'P', 'C', '1'};
}

void write_lpc(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_lpc: cannot open " + path.string());
  out.write(kMagic, 4);
  auto count = static_cast<std::uint32_t>(cloud.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  std::vector<float> buf(static_cast<size_t>(cloud.size()) * 3);
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < 3; ++c)
      buf[static_cast<size_t>(i) * 3 + c] =
          static_cast<float>(cloud.points(i, c));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write_lpc: write failed " + path.string());
}

PointCloud read_lpc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_lpc: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("read_lpc: bad magic in " + path.string());
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  std::vector<float> buf(static_cast<size_t>(count) * 3);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw std::runtime_error("read_lpc: truncated file " + path.string());
  PointCloud cloud;
  cloud.points.resize(count, 3);
  for (std::uint32_t i = 0; i < count; ++i)
    for (int c = 0; c < 3; ++c)
      cloud.points(i, c) = buf[static_cast<size_t>(i) * 3 + c];
  return cloud;
}

}  // namespace pcreid

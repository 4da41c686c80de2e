#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <zlib.h>

#include "nifm/errors.hpp"
#include "nifm/nets.hpp"

namespace nifm::nets {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host byte order");

constexpr char kMagic[8] = {'N', 'I', 'F', 'M', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > buf.size()) throw IoError("checkpoint truncated: " + path);
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string desc;
  for (const auto& [k, v] : c.descriptor) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint descriptor entries may not contain '=' in keys or newlines");
    desc += k + "=" + v + "\n";
  }
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, c.version);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(desc.size()));
  buf += desc;
  put<std::uint64_t>(buf, c.payload.size());
  buf.append(reinterpret_cast<const char*>(c.payload.data()), c.payload.size() * sizeof(double));
  put<std::uint32_t>(buf, crc_of(buf.data(), buf.size()));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path);
  std::size_t pos = sizeof(kMagic);
  Checkpoint c;
  c.version = get<std::uint32_t>(buf, pos, path);
  if (c.version != kCheckpointVersion)
    throw IoError("checkpoint format version " + std::to_string(c.version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + "): " + path);
  if (buf.size() < 4) throw IoError("checkpoint truncated: " + path);
  std::size_t crc_pos = buf.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + crc_pos, 4);
  if (stored != crc_of(buf.data(), crc_pos)) throw IoError("checkpoint checksum mismatch (corrupt file): " + path);
  const auto dlen = get<std::uint32_t>(buf, pos, path);
  if (pos + dlen > crc_pos) throw IoError("checkpoint truncated: " + path);
  std::istringstream ds(buf.substr(pos, dlen));
  pos += dlen;
  for (std::string line; std::getline(ds, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint descriptor line '" + line + "'");
    c.descriptor[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto n = get<std::uint64_t>(buf, pos, path);
  if (pos + n * sizeof(double) != crc_pos) throw IoError("checkpoint payload size mismatch: " + path);
  c.payload.resize(n);
  std::memcpy(c.payload.data(), buf.data() + pos, n * sizeof(double));
  return c;
}

Checkpoint make_checkpoint(const Network& net, const std::map<std::string, std::string>& metadata) {
  Checkpoint c;
  c.descriptor = net.descriptor();
  for (const auto& [k, v] : metadata) c.descriptor.emplace(k, v);
  c.payload = net.state_vector();
  return c;
}

MarginalNet marginal_from_checkpoint(const Checkpoint& c) {
  MarginalNet net(MarginalNet::arch_from_descriptor(c.descriptor), 0);
  net.load_state_vector(c.payload);
  return net;
}

CopulaNet copula_from_checkpoint(const Checkpoint& c) {
  CopulaNet net(CopulaNet::arch_from_descriptor(c.descriptor), 0);
  net.load_state_vector(c.payload);
  return net;
}

}  // namespace nifm::nets

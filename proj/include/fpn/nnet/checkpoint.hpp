#pragma once

// Checkpoint layout (all integers and scalars little-endian):
//
//   char[8]   magic "FPNNET\0\0"
//   u32       format version (1)
//   u32       scalar size in bytes (4 = float, 8 = double)
//   u32       topology text length, followed by the text (Network::topology)
//   u32       tensor count N
//   N times:  u64 element count, then the raw scalars       (parameters)
//   u64       optimizer step count
//   N times:  u64 element count, then the raw scalars       (Adam first moments)
//   N times:  u64 element count, then the raw scalars       (Adam second moments)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "fpn/nnet/optim.hpp"

namespace fpn::nn {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'F', 'P', 'N', 'N', 'E', 'T', 0, 0};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw Error("truncated checkpoint");
  return v;
}

template <class T>
void put_tensors(std::ostream& os, const ParamSet<T>& ts) {
  for (const auto& t : ts) {
    put<std::uint64_t>(os, t.size());
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
}

template <class T>
void get_tensors(std::istream& is, ParamSet<T>& ts) {
  for (auto& t : ts) {
    const auto n = get<std::uint64_t>(is);
    if (n != t.size()) throw Error("checkpoint tensor size does not match its topology");
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(T))))
      throw Error("truncated checkpoint");
  }
}

}  // namespace detail

template <class T>
void save_checkpoint(std::ostream& os, const Network<T>& net, const AdamState<T>& opt) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, sizeof(T));
  const std::string topo = net.topology();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(topo.size()));
  os.write(topo.data(), static_cast<std::streamsize>(topo.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.params().size()));
  detail::put_tensors(os, net.params());
  detail::put<std::uint64_t>(os, opt.step);
  ParamSet<T> m = opt.m.empty() ? net.zeros_like() : opt.m;
  ParamSet<T> v = opt.v.empty() ? net.zeros_like() : opt.v;
  detail::put_tensors(os, m);
  detail::put_tensors(os, v);
  if (!os) throw Error("failed to write checkpoint");
}

template <class T>
void load_checkpoint(std::istream& is, Network<T>& net, AdamState<T>& opt) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error("not a checkpoint file");
  if (detail::get<std::uint32_t>(is) != kCheckpointVersion)
    throw Error("unsupported checkpoint version");
  if (detail::get<std::uint32_t>(is) != sizeof(T)) throw Error("checkpoint scalar type mismatch");
  const auto len = detail::get<std::uint32_t>(is);
  std::string topo(len, '\0');
  if (!is.read(topo.data(), len)) throw Error("truncated checkpoint");
  net = parse_topology<T>(topo);
  if (detail::get<std::uint32_t>(is) != net.params().size())
    throw Error("checkpoint tensor count does not match its topology");
  detail::get_tensors(is, net.params());
  opt = AdamState<T>(net);
  opt.step = detail::get<std::uint64_t>(is);
  detail::get_tensors(is, opt.m);
  detail::get_tensors(is, opt.v);
}

template <class T>
void save_checkpoint(const std::string& path, const Network<T>& net, const AdamState<T>& opt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path);
  save_checkpoint(os, net, opt);
}

template <class T>
void load_checkpoint(const std::string& path, Network<T>& net, AdamState<T>& opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  load_checkpoint(is, net, opt);
}

}  // namespace fpn::nn

#include "lipdd/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "lipdd/error.hpp"

namespace lipdd {

namespace {

constexpr std::array<char, 8> kMagic{'L', 'I', 'P', 'D', 'D', 'C', 'K', '1'};

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw ParseError("checkpoint " + path.string() + " is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

nlohmann::json layer_manifest(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      layers.push_back({{"kind", "dense"}, {"shape", {d->weight.rows(), d->weight.cols()}}});
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      const auto& g = c->geometry;
      layers.push_back({{"kind", "conv"},
                        {"shape", {g.out_channels, g.input.channels, g.kernel, g.kernel}}});
    }
  }
  return layers;
}

}  // namespace

Checkpoint Checkpoint::capture(const Network& net, std::uint64_t seed, std::size_t epoch) {
  return Checkpoint{net.arch(), seed, epoch, net.params()};
}

Network Checkpoint::restore() const {
  Network net = Network::zeros(arch);
  net.set_params(weights);
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const Network shape = Network::zeros(ckpt.arch);
  if (shape.param_count() != ckpt.weights.size())
    throw Error("checkpoint weights do not match the architecture");
  nlohmann::json header = {{"version", Checkpoint::kVersion},
                           {"arch", ckpt.arch},
                           {"seed", ckpt.seed},
                           {"epoch", ckpt.epoch},
                           {"param_count", ckpt.weights.size()},
                           {"layers", layer_manifest(shape)}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, Checkpoint::kVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double w : ckpt.weights) write_le<double>(out, w);
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw ParseError(path.string() + " is not a lipdd checkpoint");
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != Checkpoint::kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_le<std::uint64_t>(in, path);
  if (header_len > (1u << 24)) throw ParseError("checkpoint header too large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw ParseError("checkpoint " + path.string() + " is truncated");
  const auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.arch = header.at("arch").get<ArchSpec>();
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.epoch = header.at("epoch").get<std::size_t>();
  const auto count = header.at("param_count").get<std::size_t>();
  if (count != ckpt.arch.param_count())
    throw ParseError("checkpoint param_count disagrees with its architecture");
  ckpt.weights.resize(count);
  for (auto& w : ckpt.weights) w = read_le<double>(in, path);
  if (in.peek() != std::char_traits<char>::eof())
    throw ParseError("checkpoint " + path.string() + " has trailing bytes");
  return ckpt;
}

}  // namespace lipdd

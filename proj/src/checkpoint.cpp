#include "fedflat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedflat/errors.hpp"

namespace fedflat {

namespace {

constexpr const char* kMagic = "fedflat-checkpoint 1";
constexpr const char* kVectors[] = {"theta", "momentum", "swa_theta"};

void write_doubles(std::ostream& out, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ServerState& state) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out << kMagic << '\n';
    out << "round " << state.round << '\n';
    out << "n_models " << state.n_models << '\n';
    for (const auto& e : state.theta.manifest().entries()) {
      out << "entry " << e.name << ' ' << e.offset;
      for (auto d : e.shape) out << ' ' << d;
      out << '\n';
    }
    out << "vectors theta momentum swa_theta\n";
    out << "length " << state.theta.size() << '\n';
    out << "end\n";
    write_doubles(out, state.theta.data());
    write_doubles(out, state.momentum.data());
    write_doubles(out, state.swa_theta.data());
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ServerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string(), 0);
  auto offset = [&] { return static_cast<std::size_t>(in.tellg()); };
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw FormatError("not a fedflat checkpoint: " + path.string(), 0);
  }
  auto manifest = std::make_shared<Manifest>();
  std::size_t round = 0, n_models = 0, length = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "round") {
      ls >> round;
    } else if (tag == "n_models") {
      ls >> n_models;
    } else if (tag == "entry") {
      std::string name;
      std::size_t off = 0, d = 0;
      Shape shape;
      ls >> name >> off;
      while (ls >> d) shape.push_back(d);
      if (off != manifest->total_size() || shape.empty()) {
        throw FormatError("checkpoint manifest entry '" + name + "' is not contiguous", offset());
      }
      manifest->add(name, shape);
    } else if (tag == "vectors") {
      std::string a, b, c;
      ls >> a >> b >> c;
      if (a != kVectors[0] || b != kVectors[1] || c != kVectors[2]) {
        throw FormatError("checkpoint vector list mismatch", offset());
      }
    } else if (tag == "length") {
      ls >> length;
    } else if (tag == "end") {
      ended = true;
      break;
    } else {
      throw FormatError("unexpected checkpoint header line '" + line + "'", offset());
    }
    if (ls.fail() && !ls.eof()) throw FormatError("malformed checkpoint header line '" + line + "'", offset());
  }
  if (!ended) throw FormatError("checkpoint header not terminated", offset());
  if (length != manifest->total_size()) {
    throw FormatError("checkpoint length " + std::to_string(length) + " does not match manifest total " +
                          std::to_string(manifest->total_size()),
                      offset());
  }
  auto read_vector = [&]() {
    std::vector<double> values(length);
    for (auto& v : values) {
      char buf[8];
      const auto at = offset();
      if (!in.read(buf, 8)) throw FormatError("checkpoint data truncated", at);
      std::uint64_t bits;
      std::memcpy(&bits, buf, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      v = std::bit_cast<double>(bits);
    }
    return ParamVector(manifest, std::move(values));
  };
  ServerState s;
  s.theta = read_vector();
  s.momentum = read_vector();
  s.swa_theta = read_vector();
  s.n_models = n_models;
  s.round = round;
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint data", offset());
  }
  return s;
}

}  // namespace fedflat

#include "spikerain/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spikerain {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'K', 'R', 'A', 'I', 'N', '\0'};

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(entries.begin(), entries.end(),
                         [&](const NamedTensor& e) { return e.name == name; });
  return it == entries.end() ? nullptr : &*it;
}

std::string encode_checkpoint(const ParamList& tensors, const std::string& meta,
                              CheckpointDtype dtype) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.dim()));
    for (auto d : t.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : t.tensor.data()) {
      if (dtype == CheckpointDtype::kF64) {
        put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError("not a checkpoint: bad magic bytes");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.meta = r.take(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < count; ++e) {
    NamedTensor nt;
    nt.name = r.take(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw IoError("entry '" + nt.name + "' has unknown dtype " + std::to_string(dtype));
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
      v = dtype == 0 ? std::bit_cast<double>(r.get<std::uint64_t>())
                     : static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
    }
    nt.tensor = Tensor(std::move(shape), std::move(values));
    ckpt.entries.push_back(std::move(nt));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors,
                     const std::string& meta, CheckpointDtype dtype) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  const auto bytes = encode_checkpoint(tensors, meta, dtype);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void restore_into(const ParamList& destination, const Checkpoint& ckpt) {
  for (const auto& dst : destination) {
    const auto* src = ckpt.find(dst.name);
    if (!src) throw IoError("checkpoint lacks entry '" + dst.name + "'");
    if (src->tensor.shape() != dst.tensor.shape()) {
      throw IoError("checkpoint entry '" + dst.name + "' has shape " + shape_str(src->tensor.shape()) +
                    ", expected " + shape_str(dst.tensor.shape()));
    }
    auto out = dst.tensor.impl()->storage;
    const auto in = src->tensor.data();
    std::copy(in.begin(), in.end(), out->begin());
  }
}

}  // namespace spikerain

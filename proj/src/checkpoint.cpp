#include "motiondiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "motiondiff/errors.hpp"

namespace motiondiff {

namespace {

constexpr std::string_view kMagic = "MDCKPT01";

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(std::size_t(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + std::size_t(i)])) << (8 * i);
    pos_ += std::size_t(width);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("tensor file truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorRecord* TensorFile::find(std::string_view name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::string encode_tensor_file(const TensorFile& file) {
  std::string out(kMagic);
  const std::string header = file.header.dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    if (r.name.size() > 0xffff) throw ContractViolation("tensor name too long: " + r.name);
    put_u16(out, static_cast<std::uint16_t>(r.name.size()));
    out += r.name;
    put_u8(out, static_cast<std::uint8_t>(r.dtype));
    put_u8(out, 2);
    put_u32(out, static_cast<std::uint32_t>(r.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(r.value.cols()));
    for (Eigen::Index i = 0; i < r.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < r.value.cols(); ++j) {
        if (r.dtype == DType::Float32)
          put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(r.value(i, j))));
        else
          put_u64(out, std::bit_cast<std::uint64_t>(r.value(i, j)));
      }
    }
  }
  return out;
}

TensorFile decode_tensor_file(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw DataError("not a tensor file (bad magic)");
  TensorFile file;
  const auto header_len = in.uint(4);
  try {
    file.header = nlohmann::json::parse(in.take(std::size_t(header_len)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tensor file header is not valid JSON: ") + e.what());
  }
  const auto count = in.uint(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    TensorRecord r;
    r.name = std::string(in.take(std::size_t(in.uint(2))));
    const auto dtype = in.uint(1);
    if (dtype != 1 && dtype != 2) throw DataError("tensor " + r.name + " has unknown dtype");
    r.dtype = static_cast<DType>(dtype);
    if (in.uint(1) != 2) throw DataError("tensor " + r.name + " is not two-dimensional");
    const auto rows = Eigen::Index(in.uint(4));
    const auto cols = Eigen::Index(in.uint(4));
    r.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        r.value(i, j) = r.dtype == DType::Float32 ? double(std::bit_cast<float>(std::uint32_t(in.uint(4))))
                                                  : std::bit_cast<double>(in.uint(8));
    file.records.push_back(std::move(r));
  }
  if (!in.done()) throw DataError("trailing bytes after tensor records");
  return file;
}

std::string read_binary_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"n_blocks", c.n_blocks},
          {"layers_per_block", c.layers_per_block},
          {"dilation_cycle", c.dilation_cycle},
          {"n_heads", c.n_heads},
          {"attention_width", c.attention_width},
          {"feedforward_width", c.feedforward_width},
          {"input_dim", c.input_dim},
          {"cond_dim", c.cond_dim},
          {"step_embed_dim", c.step_embed_dim},
          {"max_relative_distance", c.max_relative_distance},
          {"circular", c.circular}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  try {
    c.n_blocks = j.at("n_blocks").get<int>();
    c.layers_per_block = j.at("layers_per_block").get<int>();
    c.dilation_cycle = j.at("dilation_cycle").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.attention_width = j.at("attention_width").get<int>();
    c.feedforward_width = j.at("feedforward_width").get<int>();
    c.input_dim = j.at("input_dim").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.step_embed_dim = j.at("step_embed_dim").get<int>();
    c.max_relative_distance = j.at("max_relative_distance").get<int>();
    c.circular = j.value("circular", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace motiondiff

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "alft/error.hpp"
#include "alft/model.hpp"
#include "alft/tokenizer.hpp"

namespace alft {

inline constexpr std::array<char, 4> kWeightsMagic{'A', 'L', 'F', 'T'};
inline constexpr std::uint32_t kWeightsVersion = 1;

// ---- model config (JSON) ----------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"num_heads", c.num_heads},
          {"hidden_dim", c.hidden_dim},
          {"ffn_dim", c.ffn_dim},
          {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"seed", c.seed},
          {"activation", c.activation == Activation::Gelu ? "gelu" : "identity"},
          {"layer_norm", c.layer_norm}};
}

/// Missing keys keep their defaults.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.seed = j.value("seed", c.seed);
    const auto act = j.value("activation", std::string("gelu"));
    if (act == "gelu") c.activation = Activation::Gelu;
    else if (act == "identity") c.activation = Activation::Identity;
    else throw ConfigError("unknown activation '" + act + "'");
    c.layer_norm = j.value("layer_norm", true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline ModelConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

// ---- weights (binary) ---------------------------------------------------------
//
// "ALFT" | u32 version | config | tensors in Weights::params() order.
// Config: u32 num_layers, num_heads, hidden_dim, ffn_dim, vocab_size,
// max_seq_len | u64 seed | u32 activation | u32 layer_norm.
// All integers and reals little-endian; reals are IEEE-754 binary64.

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (pos_ + sizeof(U) > bytes_.size()) throw InputError(source_ + ": truncated weights file");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 4;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_weights(const Weights& w) {
  w.validate();
  std::string out(kWeightsMagic.begin(), kWeightsMagic.end());
  const auto& c = w.config;
  detail::put_le<std::uint32_t>(out, kWeightsVersion);
  for (auto v : {c.num_layers, c.num_heads, c.hidden_dim, c.ffn_dim, c.vocab_size, c.max_seq_len}) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  detail::put_le<std::uint64_t>(out, c.seed);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.activation));
  detail::put_le<std::uint32_t>(out, c.layer_norm ? 1u : 0u);
  for (const Tensor* t : w.params())
    for (double v : t->data()) detail::put_le<double>(out, v);
  return out;
}

inline Weights decode_weights(const std::string& bytes, const std::string& source = "weights") {
  if (bytes.size() < 4 || !std::equal(kWeightsMagic.begin(), kWeightsMagic.end(), bytes.begin())) {
    throw InputError(source + ": not an ALFT weights file");
  }
  detail::Reader r(bytes, source);
  const auto version = r.get<std::uint32_t>();
  if (version != kWeightsVersion) throw InputError(source + ": unsupported version " + std::to_string(version));
  ModelConfig c;
  c.num_layers = r.get<std::uint32_t>();
  c.num_heads = r.get<std::uint32_t>();
  c.hidden_dim = r.get<std::uint32_t>();
  c.ffn_dim = r.get<std::uint32_t>();
  c.vocab_size = r.get<std::uint32_t>();
  c.max_seq_len = r.get<std::uint32_t>();
  c.seed = r.get<std::uint64_t>();
  const auto act = r.get<std::uint32_t>();
  if (act > 1) throw InputError(source + ": unknown activation code");
  c.activation = static_cast<Activation>(act);
  c.layer_norm = r.get<std::uint32_t>() != 0;
  c.validate();

  Weights w;
  w.config = c;
  w.layers.resize(c.num_layers);
  const auto shapes = Weights::param_shapes(c);
  auto ps = w.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    std::vector<double> v(shape_size(shapes[i]));
    for (double& x : v) x = r.get<double>();
    *ps[i] = Tensor(shapes[i], std::move(v));
  }
  if (r.remaining() != 0) throw InputError(source + ": trailing bytes after last tensor");
  return w;
}

inline void save_weights(const std::filesystem::path& path, const Weights& w) {
  detail::write_file_bytes(path, encode_weights(w));
}

inline Weights load_weights(const std::filesystem::path& path) {
  return decode_weights(detail::read_file_bytes(path), path.string());
}

// ---- vocabulary (text, one token per line in id order) ------------------------

/// Vocabulary file stored next to a weights file.
inline std::filesystem::path vocab_path_for(const std::filesystem::path& weights_path) {
  auto p = weights_path;
  p += ".vocab";
  return p;
}

inline void save_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens()) {
    out += t;
    out += '\n';
  }
  detail::write_file_bytes(path, out);
}

inline Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Vocab vocab;
  std::string line;
  std::size_t id = 0;
  while (std::getline(in, line)) {
    if (id < kNumReserved) {
      if (line != vocab.token(id)) throw InputError(path.string() + ": reserved token mismatch at id " + std::to_string(id));
    } else if (vocab.add(line) != id) {
      throw InputError(path.string() + ": duplicate token '" + line + "'");
    }
    ++id;
  }
  if (id < kNumReserved) throw InputError(path.string() + ": vocabulary is missing reserved tokens");
  return vocab;
}

}  // namespace alft

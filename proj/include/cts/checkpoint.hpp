#pragma once

// Checkpoint layout:
//   "CTSC1"
//   u64 length + bytes of the config block ("key=value\n" lines)
//   u64 parameter count
//   per parameter: u64 name length + bytes, tensor (u64 rank, u64 dims, f64 data)

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cts/io.hpp"
#include "cts/model.hpp"

namespace cts {

inline constexpr const char* kCheckpointMagic = "CTSC1";

inline std::string model_config_text(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "d_model=" << c.d_model << "\n"
     << "n_heads=" << c.n_heads << "\n"
     << "d_ff=" << c.d_ff << "\n"
     << "enc_layers=" << c.enc_layers << "\n"
     << "dec_layers=" << c.dec_layers << "\n"
     << "vocab_size=" << c.vocab_size << "\n"
     << "feat_dim=" << c.feat_dim << "\n"
     << "ctc_weight=" << c.ctc_weight << "\n";
  return os.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("checkpoint config missing ") + key);
    return it->second;
  };
  ModelConfig c;
  c.d_model = std::stoull(get("d_model"));
  c.n_heads = std::stoull(get("n_heads"));
  c.d_ff = std::stoull(get("d_ff"));
  c.enc_layers = std::stoull(get("enc_layers"));
  c.dec_layers = std::stoull(get("dec_layers"));
  c.vocab_size = std::stoull(get("vocab_size"));
  c.feat_dim = std::stoull(get("feat_dim"));
  c.ctc_weight = std::stod(get("ctc_weight"));
  return c;
}

inline void save_checkpoint(std::ostream& os, const Model& model) {
  os.write(kCheckpointMagic, 5);
  io::write_string(os, model_config_text(model.config()));
  io::write_u64(os, model.parameters().size());
  for (const Parameter& p : model.parameters()) {
    io::write_string(os, p.name);
    io::write_tensor(os, p.value);
  }
}

inline Model load_checkpoint(std::istream& is) {
  io::expect_magic(is, kCheckpointMagic);
  Model model(parse_model_config(io::read_string(is)));
  const std::uint64_t count = io::read_u64(is);
  if (count != model.parameters().size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(model.parameters().size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = io::read_string(is);
    Parameter* p = model.find(name);
    if (!p) throw FormatError("checkpoint parameter '" + name + "' unknown to the model");
    Tensor t = io::read_tensor(is);
    if (t.shape() != p->value.shape()) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(p->value.shape()));
    }
    p->value = std::move(t);
  }
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  save_checkpoint(os, model);
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint not found: " + path.string());
  return load_checkpoint(is);
}

}  // namespace cts

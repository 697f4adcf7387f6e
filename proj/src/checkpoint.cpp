#include "rta/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace rta {

namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const ModelParams& params) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir);

  const fs::path manifest_path = fs::path(dir) / "manifest.txt";
  const fs::path payload_path = fs::path(dir) / "payload.bin";

  std::ofstream payload(payload_path, std::ios::binary | std::ios::trunc);
  if (!payload) throw IoError("cannot write " + payload_path.string());
  std::ostringstream manifest;
  const ModelConfig& c = params.config;
  manifest << "role " << role_name(params.role) << "\n"
           << "vocab_size " << c.vocab_size << "\n"
           << "d_model " << c.d_model << "\n"
           << "n_layers " << c.n_layers << "\n"
           << "n_heads " << c.n_heads << "\n"
           << "max_context " << c.max_context << "\n"
           << "seed " << c.seed << "\n";

  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : params.tensors) {
    manifest << "tensor " << name << " " << tensor.shape.size();
    for (int s : tensor.shape) manifest << " " << s;
    manifest << " " << offset << "\n";
    payload.write(reinterpret_cast<const char*>(tensor.data.data()),
                  static_cast<std::streamsize>(tensor.data.size() *
                                               sizeof(double)));
    offset += tensor.data.size() * sizeof(double);
  }
  payload.close();
  if (!payload) throw IoError("write failed for " + payload_path.string());

  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw IoError("cannot write " + manifest_path.string());
  mf << manifest.str();
  mf.close();
  if (!mf) throw IoError("write failed for " + manifest_path.string());
}

ModelParams load_checkpoint(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.txt";
  const fs::path payload_path = fs::path(dir) / "payload.bin";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  std::ifstream payload(payload_path, std::ios::binary);
  if (!payload) throw IoError("cannot open " + payload_path.string());

  ModelParams p;
  std::string key;
  while (mf >> key) {
    if (key == "role") {
      std::string r;
      mf >> r;
      p.role = role_from_name(r);
    } else if (key == "vocab_size") {
      mf >> p.config.vocab_size;
    } else if (key == "d_model") {
      mf >> p.config.d_model;
    } else if (key == "n_layers") {
      mf >> p.config.n_layers;
    } else if (key == "n_heads") {
      mf >> p.config.n_heads;
    } else if (key == "max_context") {
      mf >> p.config.max_context;
    } else if (key == "seed") {
      mf >> p.config.seed;
    } else if (key == "tensor") {
      std::string name;
      std::size_t ndims;
      mf >> name >> ndims;
      std::vector<int> shape(ndims);
      std::int64_t count = 1;
      for (std::size_t i = 0; i < ndims; ++i) {
        mf >> shape[i];
        count *= shape[i];
      }
      std::uint64_t offset;
      mf >> offset;
      Tensor t = Tensor::zeros(shape);
      payload.seekg(static_cast<std::streamoff>(offset));
      payload.read(reinterpret_cast<char*>(t.data.data()),
                   static_cast<std::streamsize>(count * sizeof(double)));
      if (!payload) {
        throw IoError("truncated payload for tensor " + name + " in " +
                      payload_path.string());
      }
      p.tensors[name] = std::move(t);
    } else {
      throw IoError("unknown manifest key '" + key + "' in " +
                    manifest_path.string());
    }
  }
  p.config.validate();
  return p;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (in.eof()) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace rta

#include "core/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <set>

#include "core/error.hpp"

namespace bmil {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
  require(std::fwrite(p, 1, n, f) == n, "short write to '{}'", path);
}
void read_bytes(std::FILE* f, void* p, std::size_t n, const std::string& path) {
  require(std::fread(p, 1, n, f) == n, "truncated file '{}'", path);
}
void write_u32(std::FILE* f, std::uint32_t v, const std::string& path) {
  write_bytes(f, &v, sizeof v, path);
}
std::uint32_t read_u32(std::FILE* f, const std::string& path) {
  std::uint32_t v = 0;
  read_bytes(f, &v, sizeof v, path);
  return v;
}
void write_str(std::FILE* f, const std::string& s, const std::string& path) {
  write_u32(f, static_cast<std::uint32_t>(s.size()), path);
  write_bytes(f, s.data(), s.size(), path);
}
std::string read_str(std::FILE* f, const std::string& path) {
  const std::uint32_t n = read_u32(f, path);
  require(n < (1u << 24), "implausible string length {} in '{}'", n, path);
  std::string s(n, '\0');
  read_bytes(f, s.data(), n, path);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Param*>& params,
                     const std::string& header_json) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, "cannot open '{}' for writing", path);
  write_bytes(f.get(), kCkptMagic, sizeof kCkptMagic, path);
  write_u32(f.get(), kCkptVersion, path);
  write_str(f.get(), header_json, path);
  write_u32(f.get(), static_cast<std::uint32_t>(params.size()), path);
  for (const Param* p : params) {
    write_str(f.get(), p->name, path);
    write_u32(f.get(), static_cast<std::uint32_t>(p->value.ndim()), path);
    for (int d : p->value.shape()) {
      const std::int32_t dd = d;
      write_bytes(f.get(), &dd, sizeof dd, path);
    }
    write_bytes(f.get(), p->value.data(), sizeof(double) * p->value.numel(), path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, "cannot open '{}'", path);
  char magic[8];
  read_bytes(f.get(), magic, sizeof magic, path);
  require(std::memcmp(magic, kCkptMagic, sizeof magic) == 0, "'{}' is not a checkpoint file",
          path);
  const std::uint32_t version = read_u32(f.get(), path);
  require(version == kCkptVersion, "unsupported checkpoint version {} in '{}'", version, path);

  Checkpoint out;
  out.header_json = read_str(f.get(), path);
  const std::uint32_t count = read_u32(f.get(), path);
  out.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_str(f.get(), path);
    const std::uint32_t rank = read_u32(f.get(), path);
    require(rank <= 4, "implausible tensor rank {} in '{}'", rank, path);
    std::vector<int> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::int32_t dd = 0;
      read_bytes(f.get(), &dd, sizeof dd, path);
      require(dd > 0, "non-positive dim {} in '{}'", dd, path);
      shape[d] = dd;
    }
    Tensor t(shape);
    read_bytes(f.get(), t.data(), sizeof(double) * t.numel(), path);
    require(t.all_finite(), "non-finite values in tensor '{}' of '{}'", name, path);
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void apply_checkpoint(const Checkpoint& ckpt, const std::vector<Param*>& params) {
  std::set<std::string> used;
  for (Param* p : params) {
    const Tensor* found = nullptr;
    for (const auto& [name, t] : ckpt.tensors)
      if (name == p->name) {
        found = &t;
        break;
      }
    require(found != nullptr, "checkpoint is missing tensor '{}'", p->name);
    require(found->shape() == p->value.shape(), "checkpoint tensor '{}' has shape {}, want {}",
            p->name, found->shape_str(), p->value.shape_str());
    p->value = *found;
    used.insert(p->name);
  }
  for (const auto& [name, t] : ckpt.tensors)
    require(used.count(name) == 1, "checkpoint tensor '{}' matches no parameter", name);
}

}  // namespace bmil

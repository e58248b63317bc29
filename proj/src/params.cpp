#include "pogmv/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "pogmv/errors.hpp"

namespace pogmv {

int ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw Error("IoFailure", "duplicate param " + name);
  Entry e;
  e.name = name;
  e.m = Tensor(init.shape);
  e.v = Tensor(init.shape);
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  int id = static_cast<int>(entries_.size()) - 1;
  index_[name] = id;
  return id;
}

bool ParamStore::has(const std::string& name) const {
  return index_.count(name) > 0;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("IoFailure", "unknown param " + name);
  return entries_[it->second].value;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("IoFailure", "unknown param " + name);
  return entries_[it->second].value;
}

std::size_t ParamStore::total_params() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_->leaf(store_->at(name));
  bound_[name] = v;
  return v;
}

void ParamBinder::adam_step(double lr, double beta1, double beta2, double eps) {
  store_->adam_steps += 1;
  double t = static_cast<double>(store_->adam_steps);
  double bc1 = 1.0 - std::pow(beta1, t);
  double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& e : store_->entries()) {
    const Tensor* grad = nullptr;
    auto it = bound_.find(e.name);
    if (it != bound_.end()) grad = &tape_->grad(it->second);
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      double g = grad ? grad->data[i] : 0.0;
      e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
      e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
      double mhat = e.m.data[i] / bc1;
      double vhat = e.v.data[i] / bc2;
      e.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw Error("IoFailure", "truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const std::string& config_json) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("IoFailure", "cannot open " + path);
  f.write("POGC", 4);
  put_u32(f, kCheckpointVersion);
  put_u32(f, static_cast<uint32_t>(config_json.size()));
  f.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  put_u32(f, static_cast<uint32_t>(store.entries().size()));
  for (const auto& e : store.entries()) {
    put_u32(f, static_cast<uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(f, static_cast<uint32_t>(e.value.shape.size()));
    for (int d : e.value.shape) put_u32(f, static_cast<uint32_t>(d));
    std::vector<float> buf(e.value.numel());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(e.value.data[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!f) throw Error("IoFailure", "write failed: " + path);
}

std::string load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("MissingFile", path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "POGC", 4) != 0) {
    throw Error("CheckpointVersionMismatch", "bad magic in " + path);
  }
  uint32_t ver = get_u32(f);
  if (ver != kCheckpointVersion) {
    throw Error("CheckpointVersionMismatch",
                "version " + std::to_string(ver) + " in " + path);
  }
  uint32_t clen = get_u32(f);
  std::string config(clen, '\0');
  f.read(config.data(), clen);
  if (!f) throw Error("IoFailure", "truncated checkpoint");
  uint32_t count = get_u32(f);
  for (uint32_t a = 0; a < count; ++a) {
    uint32_t nlen = get_u32(f);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    uint32_t rank = get_u32(f);
    std::vector<int> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(get_u32(f));
    Tensor t(shape);
    std::vector<float> buf(t.numel());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw Error("IoFailure", "truncated checkpoint array " + name);
    for (std::size_t i = 0; i < buf.size(); ++i)
      t.data[i] = static_cast<double>(buf[i]);
    store.add(name, std::move(t));
  }
  return config;
}

}  // namespace pogmv

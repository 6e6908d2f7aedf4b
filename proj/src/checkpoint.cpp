#include "dforge/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace dforge::ad {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'O', 'R', 'G', 'E', '0', '1'};

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

double get_f64(std::istream& is) {
  const uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

void write_record(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                  const std::vector<double>& data) {
  put_u64(os, name.size());
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u64(os, shape.size());
  for (int e : shape) put_u64(os, static_cast<uint64_t>(e));
  for (double d : data) put_f64(os, d);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params, const Adam* optimizer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  for (const NamedParam& p : params)
    write_record(os, p.name, p.value.shape(), p.value.values());
  if (optimizer) {
    for (const auto& [name, m] : optimizer->state()) {
      write_record(os, name + ".m1", {static_cast<int>(m.m1.size())}, m.m1);
      write_record(os, name + ".m2", {static_cast<int>(m.m2.size())}, m.m2);
    }
    write_record(os, "optim.step", {1},
                 {static_cast<double>(optimizer->step_count())});
  }
  if (!os) fail("checkpoint: write failed for '" + path + "'");
}

std::map<std::string, Tensor> load_checkpoint_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    fail("checkpoint: '" + path + "' is not a DFORGE01 file");

  std::map<std::string, Tensor> records;
  while (true) {
    const uint64_t name_len = get_u64(is);
    if (is.eof() || !is) break;
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const uint64_t rank = get_u64(is);
    std::vector<int> shape;
    uint64_t numel = 1;
    for (uint64_t i = 0; i < rank; ++i) {
      const uint64_t e = get_u64(is);
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    std::vector<double> data(numel);
    for (uint64_t i = 0; i < numel; ++i) data[i] = get_f64(is);
    if (!is) fail("checkpoint: truncated record '" + name + "' in '" + path + "'");
    if (shape.empty()) shape = {1};  // rank-0 scalar
    records.emplace(name, Tensor::from_data(shape, std::move(data)));
  }
  return records;
}

void load_checkpoint(const std::string& path, ParamSet& params, Adam* optimizer) {
  auto records = load_checkpoint_raw(path);
  for (NamedParam& p : params) {
    auto it = records.find(p.name);
    if (it == records.end())
      fail("checkpoint: '" + path + "' is missing parameter '" + p.name + "'");
    if (it->second.shape() != p.value.shape())
      fail("checkpoint: shape mismatch for '" + p.name + "': file has " +
           shape_str(it->second.shape()) + ", expected " + shape_str(p.value.shape()));
    p.value.values() = it->second.values();
  }
  if (optimizer) {
    for (NamedParam& p : params) {
      auto m1 = records.find(p.name + ".m1");
      auto m2 = records.find(p.name + ".m2");
      if (m1 == records.end() || m2 == records.end()) continue;
      Adam::Moments& m = optimizer->state()[p.name];
      m.m1 = m1->second.values();
      m.m2 = m2->second.values();
    }
    auto st = records.find("optim.step");
    if (st != records.end())
      optimizer->set_step_count(static_cast<long>(st->second.item()));
  }
}

}  // namespace dforge::ad

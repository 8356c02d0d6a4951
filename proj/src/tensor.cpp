#include "dilnet/tensor.hpp"

#include <fstream>

#include "binio.hpp"

namespace dilnet {

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os.write("DILT", 4);
  binio::put_u32(os, 1);
  binio::put_u64(os, static_cast<uint64_t>(t.shape.n));
  binio::put_u64(os, static_cast<uint64_t>(t.shape.c));
  binio::put_u64(os, static_cast<uint64_t>(t.shape.h));
  binio::put_u64(os, static_cast<uint64_t>(t.shape.w));
  for (float v : t.data) binio::put_f32(os, v);
  if (!os) throw DataError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "DILT") throw FormatError(path + ": bad magic", 0);
  uint32_t version = r.u32("version");
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version), 4);
  Shape s;
  s.n = static_cast<int64_t>(r.u64("extent n"));
  s.c = static_cast<int64_t>(r.u64("extent c"));
  s.h = static_cast<int64_t>(r.u64("extent h"));
  s.w = static_cast<int64_t>(r.u64("extent w"));
  s.validate();
  Tensor t(s);
  for (auto& v : t.data) v = r.f32("payload");
  return t;
}

}  // namespace dilnet

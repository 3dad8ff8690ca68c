#include "pasta/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "tensor snapshots assume a little-endian host");

namespace pasta {

void write_tensor(std::ostream& out, const Tensor& t) {
  nlohmann::json header;
  header["shape"] = t.shape();
  header["dtype"] = "f64";
  const std::string hs = header.dump();
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  out.write(kTensorMagic, sizeof(kTensorMagic));
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw std::runtime_error("tensor snapshot: write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("tensor snapshot: bad magic (expected PASTATNS)");
  }
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw std::runtime_error("tensor snapshot: truncated header length");
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw std::runtime_error("tensor snapshot: truncated header");
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("dtype").get<std::string>() != "f64") {
    throw std::runtime_error("tensor snapshot: unsupported dtype " +
                             header.at("dtype").get<std::string>());
  }
  const auto shape = header.at("shape").get<std::vector<std::size_t>>();
  std::vector<double> values(shape_numel(shape));
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw std::runtime_error("tensor snapshot: truncated payload");
  return Tensor::from_data(shape, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  return read_tensor(in);
}

std::string tensor_bytes(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

}  // namespace pasta

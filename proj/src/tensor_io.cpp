#include "polyfuse/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace polyfuse {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace {

constexpr std::uint32_t kMaxOrder = 64;

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError(std::string("tensor stream truncated while reading ") + what);
  }
  return value;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.order()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  const auto order = get<std::uint32_t>(is, "order");
  if (order > kMaxOrder) throw FormatError("tensor order " + std::to_string(order) + " is implausible");
  Shape shape(order);
  std::uint64_t total = 1;
  for (auto& d : shape) {
    const auto dim = get<std::uint64_t>(is, "dimension");
    if (dim == 0) throw FormatError("tensor dimension of size 0");
    if (total > (std::uint64_t{1} << 40) / dim) throw FormatError("tensor too large");
    total *= dim;
    d = static_cast<std::size_t>(dim);
  }
  std::vector<double> data(static_cast<std::size_t>(total));
  if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * sizeof(double)))) {
    throw FormatError("tensor stream truncated while reading payload of shape " + shape_string(shape));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open tensor file " + path.string());
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after tensor payload in " + path.string());
  }
  return t;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace polyfuse

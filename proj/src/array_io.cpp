#include "busuq/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "busuq/common.hpp"

namespace busuq::io {

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
  }
  return v;
}

}  // namespace

void write_f32(const std::filesystem::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    words[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  require(out.good(), "write failed: " + path.string());
}

std::vector<float> read_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  require(bytes % 4 == 0, path.string() + ": size is not a multiple of 4 bytes");
  in.seekg(0);
  std::vector<std::uint32_t> words(bytes / 4);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    values[i] = std::bit_cast<float>(to_little(words[i]));
  }
  return values;
}

json write_tensor(const std::filesystem::path& dir, const std::string& name,
                  const nn::Tensor<float>& tensor) {
  const std::string file = name + ".f32";
  write_f32(dir / file, std::span<const float>(tensor.data.data(), tensor.data.size()));
  return json{{"file", file}, {"shape", tensor.shape}, {"dtype", "f32le"}};
}

nn::Tensor<float> read_tensor(const std::filesystem::path& dir, const json& entry) {
  nn::Tensor<float> t;
  t.shape = entry.at("shape").get<std::vector<nn::Index>>();
  const auto values = read_f32(dir / entry.at("file").get<std::string>());
  require(static_cast<nn::Index>(values.size()) == nn::Tensor<float>::element_count(t.shape),
          "array " + entry.at("file").get<std::string>() + " does not match shape " +
              nn::shape_string(t.shape));
  t.data = Eigen::Map<const Eigen::VectorXf>(values.data(), static_cast<nn::Index>(values.size()));
  return t;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& value) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot open " + path.string() + " for writing");
  out << value.dump(2) << '\n';
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex_digest(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << value;
  return os.str();
}

}  // namespace busuq::io

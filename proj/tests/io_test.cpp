#include <doctest.h>

#include "oracles.hpp"
#include "pasta/io.hpp"

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

using namespace pasta;

TEST_CASE("tensor snapshot round-trips and is byte-stable") {
  std::mt19937_64 rng(41);
  Tensor t = Tensor::from_data({3, 5}, oracle::random_values(rng, 15, -10.0, 10.0));

  const std::string bytes = tensor_bytes(t);
  CHECK(std::memcmp(bytes.data(), "PASTATNS", 8) == 0);
  CHECK(tensor_bytes(t) == bytes);  // deterministic encoding

  std::istringstream in(bytes);
  Tensor back = read_tensor(in);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == t.data()[i]);

  const auto path = std::filesystem::temp_directory_path() / "pasta_io_test.tns";
  save_tensor(path, t);
  Tensor loaded = load_tensor(path);
  CHECK(tensor_bytes(loaded) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("tensor snapshot rejects corrupt input") {
  std::istringstream bad_magic("NOTMAGIC garbage");
  CHECK_THROWS_WITH_AS(read_tensor(bad_magic), doctest::Contains("PASTATNS"),
                       std::runtime_error);

  Tensor t = Tensor::from_data({2}, {1.0, 2.0});
  std::string bytes = tensor_bytes(t);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(read_tensor(truncated), std::runtime_error);
}

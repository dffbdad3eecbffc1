#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "lemmaforge/common.hpp"

namespace lemmaforge::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lemmaforge-test-" + hex64((static_cast<std::uint64_t>(rd()) << 32) ^ rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(LEMMAFORGE_FIXTURES) / name;
}

}  // namespace lemmaforge::testing

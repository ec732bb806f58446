#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ugg {

// Whole-file read; IoError names the path on failure.
std::string read_file(const std::filesystem::path& path);

// Truncating write under an exclusive advisory lock on the target file.
void write_file_locked(const std::filesystem::path& path, std::string_view bytes);

// Holds an exclusive lock on `<dir>/.ugg.lock` for its lifetime. A second
// holder (in this or another process) fails with IoError instead of waiting.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

// Little-endian byte packing shared by the binary formats.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);
std::uint32_t get_u32(std::string_view in, std::size_t at);
std::uint64_t get_u64(std::string_view in, std::size_t at);
float get_f32(std::string_view in, std::size_t at);
double get_f64(std::string_view in, std::size_t at);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::string hex64(std::uint64_t v);

}  // namespace ugg

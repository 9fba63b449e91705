#pragma once

// Flat little-endian record files for timetag and photon-arrival streams.
//
// Tag record (17 bytes): u64 time_ps, u8 channel | origin << 6, u64 pair_id.
// Arrival record (17 bytes): u64 time_ps, u8 arm, u64 pair_id.
// Times are stored as two's complement. pair_id = 2^64-1 means "none".

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hsps/types.hpp"

namespace hsps {

inline constexpr std::size_t kTagRecordBytes = 17;
inline constexpr std::uint8_t kMaxChannel = 63;

enum class TagFormat { binary, csv };
TagFormat parse_tag_format(const std::string& name);
// binary for ".bin"/".tags", csv for ".csv".
TagFormat tag_format_for(const std::filesystem::path& path);

void encode_tag(const TimeTag& tag, bool keep_truth, std::uint8_t* out);
TimeTag decode_tag(const std::uint8_t* in);

class TagWriter {
 public:
  // keep_truth=false strips origin and pair id.
  TagWriter(const std::filesystem::path& path, TagFormat format, bool keep_truth);
  ~TagWriter();
  TagWriter(const TagWriter&) = delete;
  TagWriter& operator=(const TagWriter&) = delete;

  void write(std::span<const TimeTag> tags);
  void close();
  std::uint64_t records() const { return records_; }

 private:
  void flush_buffer();

  std::FILE* file_ = nullptr;
  std::filesystem::path path_;
  TagFormat format_;
  bool keep_truth_;
  std::vector<char> buffer_;
  std::uint64_t records_ = 0;
};

// Reads a tag file in bounded batches.
class TagReader {
 public:
  explicit TagReader(const std::filesystem::path& path);
  TagReader(const std::filesystem::path& path, TagFormat format);
  ~TagReader();
  TagReader(const TagReader&) = delete;
  TagReader& operator=(const TagReader&) = delete;

  // Appends up to max_records to out (after clearing it). Returns false at EOF
  // with nothing read. Throws DataError on malformed content.
  bool read(std::size_t max_records, std::vector<TimeTag>& out);

 private:
  std::FILE* file_ = nullptr;
  std::filesystem::path path_;
  TagFormat format_;
  std::vector<std::uint8_t> buffer_;
  std::uint64_t line_ = 0;
};

std::vector<TimeTag> read_tags(const std::filesystem::path& path);
void write_tags(const std::filesystem::path& path, std::span<const TimeTag> tags, bool keep_truth = true);

void write_arrivals(const std::filesystem::path& path, std::span<const PhotonArrival> arrivals, TagFormat format);
std::vector<PhotonArrival> read_arrivals(const std::filesystem::path& path, TagFormat format);

}  // namespace hsps

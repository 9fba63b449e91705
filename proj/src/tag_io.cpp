#include "hsps/tag_io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>

#include "hsps/error.hpp"

namespace hsps {
namespace {

void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::FILE* open_or_throw(const std::filesystem::path& path, const char* mode) {
  std::FILE* f = std::fopen(path.c_str(), mode);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

template <typename T>
T parse_field(std::string_view s, const std::filesystem::path& path, std::uint64_t line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": bad field '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

TagFormat parse_tag_format(const std::string& name) {
  if (name == "binary" || name == "bin") return TagFormat::binary;
  if (name == "csv") return TagFormat::csv;
  throw ConfigError("unknown tag format '" + name + "' (binary|csv)");
}

TagFormat tag_format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? TagFormat::csv : TagFormat::binary;
}

void encode_tag(const TimeTag& tag, bool keep_truth, std::uint8_t* out) {
  if (tag.channel > kMaxChannel) throw DataError("channel id above 63 cannot be encoded");
  put_u64(out, static_cast<std::uint64_t>(tag.time));
  const auto origin = keep_truth ? static_cast<std::uint8_t>(tag.origin) : std::uint8_t{0};
  out[8] = static_cast<std::uint8_t>(tag.channel | (origin << 6));
  put_u64(out + 9, keep_truth ? tag.pair_id : kNoPair);
}

TimeTag decode_tag(const std::uint8_t* in) {
  TimeTag t;
  t.time = static_cast<Picos>(get_u64(in));
  t.channel = in[8] & 0x3F;
  t.origin = static_cast<Origin>(in[8] >> 6);
  t.pair_id = get_u64(in + 9);
  return t;
}

TagWriter::TagWriter(const std::filesystem::path& path, TagFormat format, bool keep_truth)
    : path_(path), format_(format), keep_truth_(keep_truth) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  file_ = open_or_throw(path, "wb");
  if (format_ == TagFormat::csv) {
    const std::string header = keep_truth_ ? "time_ps,channel,origin,generation,pair_id\n" : "time_ps,channel\n";
    buffer_.insert(buffer_.end(), header.begin(), header.end());
  }
}

TagWriter::~TagWriter() {
  try {
    close();
  } catch (...) {
  }
}

void TagWriter::flush_buffer() {
  if (buffer_.empty() || !file_) return;
  if (std::fwrite(buffer_.data(), 1, buffer_.size(), file_) != buffer_.size()) throw IoError("write failed: " + path_.string());
  buffer_.clear();
}

void TagWriter::write(std::span<const TimeTag> tags) {
  if (!file_) throw PreconditionError("writer is closed");
  if (format_ == TagFormat::binary) {
    const std::size_t at = buffer_.size();
    buffer_.resize(at + tags.size() * kTagRecordBytes);
    auto* p = reinterpret_cast<std::uint8_t*>(buffer_.data() + at);
    for (const auto& t : tags) {
      encode_tag(t, keep_truth_, p);
      p += kTagRecordBytes;
    }
  } else {
    char line[96];
    for (const auto& t : tags) {
      const int n = keep_truth_
                        ? std::snprintf(line, sizeof line, "%lld,%u,%u,%u,%llu\n", static_cast<long long>(t.time),
                                        t.channel, static_cast<unsigned>(t.origin), t.generation,
                                        static_cast<unsigned long long>(t.pair_id))
                        : std::snprintf(line, sizeof line, "%lld,%u\n", static_cast<long long>(t.time), t.channel);
      buffer_.insert(buffer_.end(), line, line + n);
    }
  }
  records_ += tags.size();
  if (buffer_.size() > (1u << 22)) flush_buffer();
}

void TagWriter::close() {
  if (!file_) return;
  flush_buffer();
  const bool ok = std::fclose(file_) == 0;
  file_ = nullptr;
  if (!ok) throw IoError("close failed: " + path_.string());
}

TagReader::TagReader(const std::filesystem::path& path) : TagReader(path, tag_format_for(path)) {}

TagReader::TagReader(const std::filesystem::path& path, TagFormat format) : path_(path), format_(format) {
  file_ = open_or_throw(path, "rb");
}

TagReader::~TagReader() {
  if (file_) std::fclose(file_);
}

bool TagReader::read(std::size_t max_records, std::vector<TimeTag>& out) {
  out.clear();
  if (format_ == TagFormat::binary) {
    buffer_.resize(max_records * kTagRecordBytes);
    const std::size_t got = std::fread(buffer_.data(), 1, buffer_.size(), file_);
    if (got % kTagRecordBytes != 0) throw DataError(path_.string() + ": truncated tag record");
    for (std::size_t off = 0; off < got; off += kTagRecordBytes) out.push_back(decode_tag(buffer_.data() + off));
    return !out.empty();
  }
  char buf[256];
  while (out.size() < max_records && std::fgets(buf, sizeof buf, file_)) {
    ++line_;
    std::string_view line(buf);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    if (line.empty() || line.front() == '#' || line.starts_with("time_ps")) continue;
    const auto f = split_csv(line);
    if (f.size() != 2 && f.size() != 5) throw DataError(path_.string() + ":" + std::to_string(line_) + ": expected 2 or 5 fields");
    TimeTag t;
    t.time = parse_field<Picos>(f[0], path_, line_);
    const auto ch = parse_field<unsigned>(f[1], path_, line_);
    if (ch > kMaxChannel) throw DataError(path_.string() + ":" + std::to_string(line_) + ": channel above 63");
    t.channel = static_cast<std::uint8_t>(ch);
    if (f.size() == 5) {
      const auto origin = parse_field<unsigned>(f[2], path_, line_);
      if (origin > 3) throw DataError(path_.string() + ":" + std::to_string(line_) + ": bad origin");
      t.origin = static_cast<Origin>(origin);
      t.generation = static_cast<std::uint8_t>(parse_field<unsigned>(f[3], path_, line_));
      t.pair_id = parse_field<std::uint64_t>(f[4], path_, line_);
    }
    out.push_back(t);
  }
  return !out.empty();
}

std::vector<TimeTag> read_tags(const std::filesystem::path& path) {
  TagReader reader(path);
  std::vector<TimeTag> all;
  std::vector<TimeTag> batch;
  while (reader.read(1 << 16, batch)) all.insert(all.end(), batch.begin(), batch.end());
  return all;
}

void write_tags(const std::filesystem::path& path, std::span<const TimeTag> tags, bool keep_truth) {
  TagWriter w(path, tag_format_for(path), keep_truth);
  w.write(tags);
  w.close();
}

void write_arrivals(const std::filesystem::path& path, std::span<const PhotonArrival> arrivals, TagFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  if (format == TagFormat::csv) {
    out << "time_ps,arm,pair_id\n";
    for (const auto& a : arrivals) {
      out << a.time << ',' << (a.arm == Arm::signal ? "signal" : "idler") << ',' << a.pair_id << '\n';
    }
  } else {
    std::uint8_t rec[kTagRecordBytes];
    for (const auto& a : arrivals) {
      put_u64(rec, static_cast<std::uint64_t>(a.time));
      rec[8] = static_cast<std::uint8_t>(a.arm);
      put_u64(rec + 9, a.pair_id);
      out.write(reinterpret_cast<const char*>(rec), kTagRecordBytes);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<PhotonArrival> read_arrivals(const std::filesystem::path& path, TagFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PhotonArrival> out;
  if (format == TagFormat::binary) {
    std::uint8_t rec[kTagRecordBytes];
    while (in.read(reinterpret_cast<char*>(rec), kTagRecordBytes)) {
      if (rec[8] > 1) throw DataError(path.string() + ": bad arm byte");
      out.push_back({static_cast<Picos>(get_u64(rec)), static_cast<Arm>(rec[8]), get_u64(rec + 9)});
    }
    if (in.gcount() != 0) throw DataError(path.string() + ": truncated arrival record");
    return out;
  }
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line.starts_with("time_ps")) continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw DataError(path.string() + ":" + std::to_string(n) + ": expected 3 fields");
    PhotonArrival a;
    a.time = parse_field<Picos>(f[0], path, n);
    if (f[1] == "signal") a.arm = Arm::signal;
    else if (f[1] == "idler") a.arm = Arm::idler;
    else throw DataError(path.string() + ":" + std::to_string(n) + ": bad arm");
    a.pair_id = parse_field<std::uint64_t>(f[2], path, n);
    out.push_back(a);
  }
  return out;
}

}  // namespace hsps

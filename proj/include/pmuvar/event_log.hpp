#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "pmuvar/errors.hpp"

namespace pmuvar {

// Append-only newline-delimited records, one per line:
//   <crc32 of payload, 8 lowercase hex digits> <single-line JSON payload>
class RecordLog {
 public:
  static std::uint32_t checksum(std::string_view payload) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
  }

  static std::string frame(std::string_view payload) {
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", checksum(payload));
    std::string line(hex, 8);
    line += ' ';
    line += payload;
    return line;
  }

  // Payload of a well-formed line, or nothing when the checksum or shape is off.
  static std::optional<std::string_view> unframe(std::string_view line) {
    if (line.size() < 10 || line[8] != ' ') return std::nullopt;
    std::uint32_t crc = 0;
    for (int i = 0; i < 8; ++i) {
      const char c = line[static_cast<std::size_t>(i)];
      std::uint32_t d = 0;
      if (c >= '0' && c <= '9') {
        d = static_cast<std::uint32_t>(c - '0');
      } else if (c >= 'a' && c <= 'f') {
        d = static_cast<std::uint32_t>(c - 'a' + 10);
      } else {
        return std::nullopt;
      }
      crc = (crc << 4) | d;
    }
    const std::string_view payload = line.substr(9);
    if (checksum(payload) != crc) return std::nullopt;
    return payload;
  }

  // Opens (creating if needed) and recovers the file. A damaged or partial
  // final line is cut off; damage before the last line is a format error.
  explicit RecordLog(std::filesystem::path path) : path_(std::move(path)) {
    recover();
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw Error("cannot open record log '" + path_.string() + "' for append");
  }

  const std::filesystem::path& path() const { return path_; }
  const std::vector<nlohmann::json>& recovered() const { return recovered_; }
  std::size_t truncated_bytes() const { return truncated_bytes_; }

  void append(const nlohmann::json& record) {
    const std::string line = frame(record.dump()) + '\n';
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw Error("write to record log '" + path_.string() + "' failed");
  }

 private:
  void recover() {
    if (!std::filesystem::exists(path_)) return;
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw Error("cannot read record log '" + path_.string() + "'");
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
      ++line_no;
      const auto nl = content.find('\n', pos);
      const bool last = nl == std::string::npos || nl + 1 == content.size();
      const std::string_view line(content.data() + pos, (nl == std::string::npos ? content.size() : nl) - pos);
      std::optional<nlohmann::json> record;
      if (nl != std::string::npos) {
        if (auto payload = unframe(line)) {
          record = nlohmann::json::parse(*payload, nullptr, false);
          if (record->is_discarded()) record.reset();
        }
      }
      if (!record) {
        if (!last) {
          throw FormatError("record log '" + path_.string() + "' is damaged at line " + std::to_string(line_no));
        }
        truncated_bytes_ = content.size() - pos;
        in.close();
        std::filesystem::resize_file(path_, pos);
        return;
      }
      recovered_.push_back(std::move(*record));
      pos = nl + 1;
    }
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<nlohmann::json> recovered_;
  std::size_t truncated_bytes_ = 0;
};

}  // namespace pmuvar

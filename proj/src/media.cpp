#include "snowwatch/media.hpp"

#include <array>
#include <chrono>
#include <mutex>
#include <random>

namespace snowwatch {

const char* to_string(MediaKind k) {
  return k == MediaKind::Photo ? "PHOTO" : "WEBCAM_FRAME";
}

const char* to_string(MediaSource s) {
  switch (s) {
    case MediaSource::Crawl: return "CRAWL";
    case MediaSource::Webcam: return "WEBCAM";
    case MediaSource::Upload: return "UPLOAD";
  }
  return "?";
}

const char* to_string(MediaState s) {
  switch (s) {
    case MediaState::New: return "NEW";
    case MediaState::FilteredOut: return "FILTERED_OUT";
    case MediaState::Aligned: return "ALIGNED";
    case MediaState::Masked: return "MASKED";
    case MediaState::Failed: return "FAILED";
  }
  return "?";
}

std::optional<MediaKind> parse_media_kind(std::string_view s) {
  if (s == "PHOTO") return MediaKind::Photo;
  if (s == "WEBCAM_FRAME" || s == "WEBCAM") return MediaKind::WebcamFrame;
  return std::nullopt;
}

std::optional<MediaSource> parse_media_source(std::string_view s) {
  for (auto v : {MediaSource::Crawl, MediaSource::Webcam, MediaSource::Upload})
    if (s == to_string(v)) return v;
  return std::nullopt;
}

std::optional<MediaState> parse_media_state(std::string_view s) {
  for (auto v : {MediaState::New, MediaState::FilteredOut, MediaState::Aligned, MediaState::Masked,
                 MediaState::Failed})
    if (s == to_string(v)) return v;
  return std::nullopt;
}

bool transition_allowed(MediaState from, MediaState to) {
  using S = MediaState;
  switch (from) {
    case S::New: return to == S::FilteredOut || to == S::Aligned || to == S::Failed;
    case S::Aligned: return to == S::Masked || to == S::Failed;
    case S::Masked: return to == S::Masked;
    default: return false;
  }
}

std::string new_media_id() {
  static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  static std::uint64_t last_ms = 0;
  static std::array<std::uint8_t, 10> rand_part{};

  std::lock_guard lock(mu);
  auto ms = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                           std::chrono::system_clock::now().time_since_epoch())
                                           .count());
  if (ms <= last_ms) {
    // same millisecond (or clock went back): bump the random part so ids stay ordered
    ms = last_ms;
    for (int i = 9; i >= 0; --i)
      if (++rand_part[i] != 0) break;
  } else {
    last_ms = ms;
    for (auto& b : rand_part) b = static_cast<std::uint8_t>(rng());
    rand_part[0] &= 0x7F;  // headroom for increments
  }

  std::string out(26, '0');
  std::uint64_t t = ms;
  for (int i = 9; i >= 0; --i) {
    out[i] = kAlphabet[t & 31];
    t >>= 5;
  }
  // 80 random bits as 16 base32 digits
  unsigned __int128 r = 0;
  for (auto b : rand_part) r = (r << 8) | b;
  for (int i = 25; i >= 10; --i) {
    out[i] = kAlphabet[static_cast<int>(r & 31)];
    r >>= 5;
  }
  return out;
}

}  // namespace snowwatch

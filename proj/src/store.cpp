#include "snowwatch/store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "snowwatch/image.hpp"
#include "snowwatch/json_io.hpp"

namespace fs = std::filesystem;

namespace snowwatch {
namespace {

constexpr const char* kCsvHeader = "media_id,timestamp,region,snow_index,eligible_pixels";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

bool matches(const MediaQuery& q, const MediaItem& m) {
  if (q.kind && m.kind != *q.kind) return false;
  if (q.state && m.state != *q.state) return false;
  if (q.webcam_id && m.webcam_id != *q.webcam_id) return false;
  if (q.bbox && !(m.geotag && q.bbox->contains(*m.geotag))) return false;
  if (q.min_alt) {
    std::optional<double> alt = m.photographer_alt;
    if (!alt && m.geotag) alt = m.geotag->alt;
    if (!alt || *alt < *q.min_alt) return false;
  }
  if (q.from && m.taken_at < *q.from) return false;
  if (q.to && m.taken_at > *q.to) return false;
  if (q.peak && std::none_of(m.peak_marks.begin(), m.peak_marks.end(),
                             [&](const PeakMark& p) { return p.peak.name == *q.peak; }))
    return false;
  return true;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ReplayResult {
  std::map<std::string, MediaItem> items;
  std::uint64_t seq = 0;
  std::uintmax_t good_bytes = 0;
};

ReplayResult replay(const fs::path& journal) {
  ReplayResult r;
  if (!fs::exists(journal)) return r;
  const std::string text = read_text(journal);
  size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // partial tail, never committed
    ++line_no;
    const std::string line = text.substr(pos, nl - pos);
    try {
      Json j = Json::parse(line);
      MediaItem item = media_from_json(j.at("payload"));
      r.seq = j.at("seq").get<std::uint64_t>();
      r.items[item.id] = std::move(item);
    } catch (const std::exception& e) {
      // a torn final line can still end in a newline byte; anything earlier is corruption
      if (nl + 1 == text.size()) break;
      throw StoreError(fmt::format("journal line {}: {}", line_no, e.what()));
    }
    pos = nl + 1;
    r.good_bytes = pos;
  }
  return r;
}

}  // namespace

void MediaQuery::validate() const {
  if (limit < 1 || limit > kMaxQueryLimit)
    throw StoreError(fmt::format("limit must be in [1, {}]", kMaxQueryLimit));
  if (offset < 0) throw StoreError("offset must be >= 0");
  if (from && to && *from > *to) throw StoreError("time range start is after its end");
  if (bbox && !bbox->valid()) throw StoreError("bbox needs lat_min < lat_max and lon_min < lon_max");
}

std::map<std::string, MediaItem> Store::replay_journal(const fs::path& journal) {
  return replay(journal).items;
}

Store::Store(fs::path root, StoreOptions opts) : root_(std::move(root)), opts_(opts) {
  for (const char* sub : {"media", "meta", "masks", "index"}) fs::create_directories(root_ / sub);
  const fs::path journal = root_ / "journal.log";
  ReplayResult r = replay(journal);
  if (fs::exists(journal) && fs::file_size(journal) != r.good_bytes) {
    spdlog::warn("journal: dropping {} bytes of an incomplete last entry",
                 fs::file_size(journal) - r.good_bytes);
    fs::resize_file(journal, r.good_bytes);
  }
  items_ = std::move(r.items);
  seq_ = r.seq;

  // Meta documents follow the journal; repair any the crash left behind.
  for (const auto& [id, item] : items_) {
    const fs::path meta = root_ / "meta" / (id + ".json");
    const std::string want = to_json(item).dump(2);
    if (!fs::exists(meta) || read_text(meta) != want) write_meta(item);
    if (!item.source_identity.empty()) by_identity_[item.source_identity] = id;
    if (!item.content_hash.empty()) by_hash_[item.content_hash] = id;
  }
  for (const auto& entry : fs::directory_iterator(root_ / "meta")) {
    const auto stem = entry.path().stem().string();
    if (entry.path().extension() == ".json" && !items_.count(stem)) fs::remove(entry.path());
  }
  if (!fs::exists(root_ / "index" / "snow_index.csv"))
    write_file_atomic(root_ / "index" / "snow_index.csv", std::string(kCsvHeader) + "\n");
  open_journal();
}

Store::~Store() {
  if (journal_) std::fclose(journal_);
}

void Store::open_journal() {
  journal_ = std::fopen((root_ / "journal.log").c_str(), "ab");
  if (!journal_) throw StoreError("cannot open journal: " + (root_ / "journal.log").string());
}

void Store::write_meta(const MediaItem& item) {
  write_file_atomic(root_ / "meta" / (item.id + ".json"), to_json(item).dump(2));
}

void Store::commit(const std::string& op, const MediaItem& item) {
  Json line = {{"seq", seq_ + 1},
               {"ts", format_timestamp(now_seconds())},
               {"op", op},
               {"id", item.id},
               {"payload", to_json(item)}};
  const std::string text = line.dump() + "\n";
  if (std::fwrite(text.data(), 1, text.size(), journal_) != text.size() || std::fflush(journal_))
    throw StoreError("journal append failed");
  if (opts_.fsync) ::fdatasync(::fileno(journal_));
  ++seq_;
  write_meta(item);
}

MediaItem Store::put_item(MediaItem item, std::span<const std::uint8_t> payload,
                          const std::string& ext) {
  std::lock_guard writer(write_mu_);
  if (item.id.empty()) item.id = new_media_id();
  {
    std::shared_lock lock(mu_);
    if (items_.count(item.id)) throw StoreError("duplicate media id " + item.id);
  }
  item.payload = item.id + ext;
  write_file_atomic(root_ / "media" / item.payload, payload);
  if (item.created_at == Timestamp{}) item.created_at = now_seconds();
  item.updated_at = item.created_at;
  commit("put", item);
  std::unique_lock lock(mu_);
  items_[item.id] = item;
  if (!item.source_identity.empty()) by_identity_[item.source_identity] = item.id;
  if (!item.content_hash.empty()) by_hash_[item.content_hash] = item.id;
  return item;
}

std::optional<MediaItem> Store::get_item(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = items_.find(id);
  if (it == items_.end()) return std::nullopt;
  return it->second;
}

MediaItem Store::transition_state(const std::string& id, MediaState from, MediaState to,
                                  const std::function<void(MediaItem&)>& mutate) {
  std::lock_guard writer(write_mu_);
  MediaItem item;
  {
    std::shared_lock lock(mu_);
    auto it = items_.find(id);
    if (it == items_.end()) throw NotFoundError("unknown media id " + id);
    item = it->second;
  }
  if (item.state != from)
    throw StateConflictError(fmt::format("{} is {}, expected {}", id, to_string(item.state),
                                         to_string(from)));
  if (!transition_allowed(from, to))
    throw StateConflictError(
        fmt::format("transition {} -> {} is not allowed", to_string(from), to_string(to)));
  if (mutate) mutate(item);
  item.id = id;
  item.state = to;
  item.updated_at = now_seconds();
  commit("transition", item);
  std::unique_lock lock(mu_);
  items_[id] = item;
  return item;
}

MediaItem Store::update_item(const std::string& id, const std::function<void(MediaItem&)>& mutate) {
  std::lock_guard writer(write_mu_);
  MediaItem item;
  {
    std::shared_lock lock(mu_);
    auto it = items_.find(id);
    if (it == items_.end()) throw NotFoundError("unknown media id " + id);
    item = it->second;
  }
  const MediaState state = item.state;
  mutate(item);
  item.id = id;
  item.state = state;
  item.updated_at = now_seconds();
  commit("update", item);
  std::unique_lock lock(mu_);
  items_[id] = item;
  return item;
}

std::vector<MediaItem> Store::all_items() const {
  std::shared_lock lock(mu_);
  std::vector<MediaItem> out;
  out.reserve(items_.size());
  for (const auto& [id, item] : items_) out.push_back(item);
  return out;
}

std::optional<MediaItem> Store::find_by_identity(const std::string& identity) const {
  std::shared_lock lock(mu_);
  auto it = by_identity_.find(identity);
  if (it == by_identity_.end()) return std::nullopt;
  return items_.at(it->second);
}

std::optional<MediaItem> Store::find_by_hash(const std::string& hash) const {
  std::shared_lock lock(mu_);
  auto it = by_hash_.find(hash);
  if (it == by_hash_.end()) return std::nullopt;
  return items_.at(it->second);
}

QueryPage Store::query(const MediaQuery& q) const {
  q.validate();
  std::vector<const MediaItem*> hits;
  QueryPage page;
  std::shared_lock lock(mu_);
  for (const auto& [id, item] : items_)
    if (matches(q, item)) hits.push_back(&item);
  std::sort(hits.begin(), hits.end(), [](const MediaItem* a, const MediaItem* b) {
    if (a->taken_at != b->taken_at) return a->taken_at > b->taken_at;
    return a->id < b->id;
  });
  page.total = hits.size();
  for (size_t i = q.offset; i < hits.size() && page.items.size() < size_t(q.limit); ++i)
    page.items.push_back(*hits[i]);
  return page;
}

Heatmap Store::heatmap(const BBox& bbox, double cell_deg, MediaQuery filters) const {
  if (!(cell_deg > 0.0) || !std::isfinite(cell_deg)) throw StoreError("cell must be > 0");
  if (!bbox.valid()) throw StoreError("bbox needs lat_min < lat_max and lon_min < lon_max");
  Heatmap h;
  h.bbox = bbox;
  h.cell_deg = cell_deg;
  h.n_lat = std::max(1, static_cast<int>(std::ceil((bbox.lat_max - bbox.lat_min) / cell_deg - 1e-9)));
  h.n_lon = std::max(1, static_cast<int>(std::ceil((bbox.lon_max - bbox.lon_min) / cell_deg - 1e-9)));
  filters.bbox = bbox;
  std::map<std::pair<int, int>, std::int64_t> counts;
  std::shared_lock lock(mu_);
  for (const auto& [id, item] : items_) {
    if (!matches(filters, item)) continue;
    int li = std::min(h.n_lat - 1, static_cast<int>((item.geotag->lat - bbox.lat_min) / cell_deg));
    int lo = std::min(h.n_lon - 1, static_cast<int>((item.geotag->lon - bbox.lon_min) / cell_deg));
    ++counts[{li, lo}];
    ++h.total;
  }
  for (const auto& [key, n] : counts) h.cells.push_back({key.first, key.second, n});
  return h;
}

fs::path Store::media_path(const MediaItem& item) const { return root_ / "media" / item.payload; }

fs::path Store::mask_path(const std::string& id) const { return root_ / "masks" / (id + ".png"); }

void Store::write_mask(const std::string& id, std::span<const std::uint8_t> png) {
  write_file_atomic(mask_path(id), png);
}

void Store::append_snow_index(const SnowIndexRecord& rec) {
  std::lock_guard lock(csv_mu_);
  std::string line = fmt::format(
      "{},{},{},{},{}\n", csv_field(rec.media_id), format_timestamp(rec.timestamp),
      csv_field(rec.region), rec.snow_index ? fmt::format("{:.17g}", *rec.snow_index) : "",
      rec.eligible_pixels);
  std::FILE* f = std::fopen((root_ / "index" / "snow_index.csv").c_str(), "ab");
  if (!f) throw StoreError("cannot open snow index");
  bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
  ok = std::fflush(f) == 0 && ok;
  if (opts_.fsync) ::fdatasync(::fileno(f));
  std::fclose(f);
  if (!ok) throw StoreError("snow index append failed");
}

std::vector<SnowIndexRecord> Store::snow_records() const {
  std::lock_guard lock(csv_mu_);
  std::vector<SnowIndexRecord> out;
  std::ifstream in(root_ / "index" / "snow_index.csv");
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (in.eof()) break;  // no trailing newline: an interrupted append
    auto f = split_csv(line);
    if (f.size() != 5) continue;
    auto ts = parse_timestamp(f[1]);
    if (!ts) continue;
    SnowIndexRecord r;
    r.media_id = f[0];
    r.timestamp = *ts;
    r.region = f[2];
    if (!f[3].empty()) r.snow_index = std::stod(f[3]);
    r.eligible_pixels = std::stoll(f[4]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SeriesRow> Store::snow_series(const std::optional<std::string>& region,
                                          const std::optional<Timestamp>& from,
                                          const std::optional<Timestamp>& to) const {
  if (from && to && *from > *to) throw StoreError("time range start is after its end");
  // The CSV keeps every recomputation; the series uses each item's latest row.
  std::map<std::string, SnowIndexRecord> latest;
  for (auto& r : snow_records()) latest[r.media_id] = r;
  std::map<std::string, std::pair<double, int>> days;
  for (const auto& [id, r] : latest) {
    if (!r.snow_index) continue;
    if (region && !region->empty() && r.region != *region) continue;
    if (from && r.timestamp < *from) continue;
    if (to && r.timestamp > *to) continue;
    auto& d = days[format_date(r.timestamp)];
    d.first += *r.snow_index;
    d.second += 1;
  }
  std::vector<SeriesRow> out;
  for (const auto& [date, acc] : days) out.push_back({date, acc.first / acc.second, acc.second});
  return out;
}

std::uint64_t Store::journal_seq() const {
  std::shared_lock lock(mu_);
  return seq_;
}

}  // namespace snowwatch

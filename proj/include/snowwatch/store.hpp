#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "snowwatch/geo.hpp"
#include "snowwatch/media.hpp"
#include "snowwatch/snowcover.hpp"

namespace snowwatch {

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public StoreError {
 public:
  using StoreError::StoreError;
};

// Compare-and-set lost: the item is no longer in the expected state.
class StateConflictError : public StoreError {
 public:
  using StoreError::StoreError;
};

inline constexpr int kMaxQueryLimit = 500;

struct MediaQuery {
  std::optional<MediaKind> kind;
  std::optional<BBox> bbox;
  std::optional<double> min_alt;  // photographer altitude, meters
  std::optional<Timestamp> from;
  std::optional<Timestamp> to;
  std::optional<std::string> peak;
  std::optional<MediaState> state;
  std::optional<std::string> webcam_id;
  int offset = 0;
  int limit = 50;

  // Throws StoreError for limit outside [1, 500], negative offset, from > to or a bad bbox.
  void validate() const;
};

struct QueryPage {
  std::vector<MediaItem> items;
  std::size_t total = 0;  // matches before pagination
};

struct HeatCell {
  int lat_idx = 0;
  int lon_idx = 0;
  std::int64_t count = 0;
};

struct Heatmap {
  BBox bbox;
  double cell_deg = 0.0;
  int n_lat = 0;
  int n_lon = 0;
  std::vector<HeatCell> cells;  // non-empty cells, row-major order
  std::int64_t total = 0;
};

struct SeriesRow {
  std::string date;  // YYYY-MM-DD
  double mean = 0.0;
  int count = 0;
};

struct StoreOptions {
  bool fsync = true;  // flush journal appends to disk before returning
};

/// Data root with media/, meta/, masks/, index/snow_index.csv and journal.log.
/// Mutations are serialized; every one is journaled before its meta document
/// is rewritten, and opening a store replays the journal.
class Store {
 public:
  explicit Store(std::filesystem::path root, StoreOptions opts = {});
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& root() const { return root_; }

  // Stores the payload under media/<id><ext> and journals the document.
  MediaItem put_item(MediaItem item, std::span<const std::uint8_t> payload, const std::string& ext);
  std::optional<MediaItem> get_item(const std::string& id) const;

  // Compare-and-set state change; `mutate` fills in the stage payload.
  MediaItem transition_state(const std::string& id, MediaState from, MediaState to,
                             const std::function<void(MediaItem&)>& mutate = {});
  // Bookkeeping that does not change the state (attempt counters).
  MediaItem update_item(const std::string& id, const std::function<void(MediaItem&)>& mutate);

  std::vector<MediaItem> all_items() const;
  std::optional<MediaItem> find_by_identity(const std::string& identity) const;
  std::optional<MediaItem> find_by_hash(const std::string& hash) const;

  QueryPage query(const MediaQuery& q) const;
  Heatmap heatmap(const BBox& bbox, double cell_deg, MediaQuery filters = {}) const;

  std::filesystem::path media_path(const MediaItem& item) const;
  std::filesystem::path mask_path(const std::string& id) const;
  void write_mask(const std::string& id, std::span<const std::uint8_t> png);

  void append_snow_index(const SnowIndexRecord& rec);
  std::vector<SnowIndexRecord> snow_records() const;
  // Per UTC day mean of the latest index of every media item in the region and range.
  std::vector<SeriesRow> snow_series(const std::optional<std::string>& region,
                                     const std::optional<Timestamp>& from,
                                     const std::optional<Timestamp>& to) const;

  std::uint64_t journal_seq() const;

  // Rebuilds item documents from a journal file alone; a partial last line is ignored.
  static std::map<std::string, MediaItem> replay_journal(const std::filesystem::path& journal);

 private:
  void open_journal();
  void commit(const std::string& op, const MediaItem& item);
  void write_meta(const MediaItem& item);

  std::filesystem::path root_;
  StoreOptions opts_;
  mutable std::shared_mutex mu_;  // guards items_ and the indexes
  std::mutex write_mu_;           // the single writer
  std::map<std::string, MediaItem> items_;
  std::map<std::string, std::string> by_identity_;
  std::map<std::string, std::string> by_hash_;
  std::uint64_t seq_ = 0;
  std::FILE* journal_ = nullptr;
  mutable std::mutex csv_mu_;
};

}  // namespace snowwatch

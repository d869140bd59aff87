#pragma once

#include <map>
#include <memory>
#include <string>
#include <thread>

#include "snowwatch/engine.hpp"

namespace httplib {
class Server;
}

namespace snowwatch {

// {cols, rows, scale, sky:[0|1...], altitude:[m|null...], distance:[m|null...]}
Json to_json(const AttributeGrid& g);

// Query-string filters of GET /api/media and /api/heatmap. Throws ApiError 400.
MediaQuery media_query_from_params(const std::multimap<std::string, std::string>& params);

/// The /api surface over one engine. Handlers are stateless; every error
/// leaves as {code, message} with status 400, 404, 409, 422 or 500.
class ApiServer {
 public:
  explicit ApiServer(Engine& engine);
  ~ApiServer();

  // Binds and serves on a background thread. Port 0 picks a free port; the
  // bound port is returned.
  int start(const std::string& host, int port);
  // Blocks until stop() is called from elsewhere.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  void routes();

  Engine& engine_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
};

}  // namespace snowwatch

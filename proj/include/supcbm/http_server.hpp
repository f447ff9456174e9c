#pragma once

#include <httplib.h>

#include <filesystem>
#include <optional>
#include <string>

#include "supcbm/service.hpp"

namespace supcbm {

namespace detail {

inline void reply(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_header(kSchemaHeader, std::to_string(kApiSchemaVersion));
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace detail

/// Registers GET /health, GET /concepts, POST /predict, POST /intervene and,
/// when `ui_dir` is given, the static bundle under /ui.
inline void mount_routes(httplib::Server& server, const InferenceService& service,
                         const std::optional<std::filesystem::path>& ui_dir = std::nullopt) {
  server.Get("/health", [&service](const httplib::Request&, httplib::Response& res) {
    detail::reply(res, service.health());
  });
  server.Get("/concepts", [&service](const httplib::Request&, httplib::Response& res) {
    detail::reply(res, service.concepts());
  });
  server.Post("/predict", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::reply(res, service.predict(req.body));
  });
  server.Post("/intervene", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::reply(res, service.intervene(req.body));
  });
  if (ui_dir && !server.set_mount_point("/ui", ui_dir->string()))
    throw DataError("ui directory " + ui_dir->string() + " does not exist");
}

}  // namespace supcbm

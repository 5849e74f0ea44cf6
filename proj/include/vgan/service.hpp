#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vgan/inversion.hpp"
#include "vgan/latent_tools.hpp"
#include "vgan/model.hpp"
#include "vgan/volume.hpp"

namespace httplib {
class Server;
}

namespace vgan {

// Content-addressed .vgan store: id = SHA-256 over shape and voxel payload.
class VolumeStore {
 public:
  explicit VolumeStore(std::filesystem::path dir);

  std::string put(const Volume& v, const std::string& provenance = "generated");
  Volume get(const std::string& id) const;  // NotFoundError if absent
  std::string raw(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::filesystem::path path_of(const std::string& id) const;

  static std::string content_id(const Volume& v);

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

struct ServiceConfig {
  std::filesystem::path checkpoint_dir;
  std::filesystem::path store_dir;
  InversionConfig inversion;
  int64_t max_count = 64;
  int64_t w_bar_samples = 10000;
};

// HTTP front end over a directory of frozen checkpoints.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  std::vector<std::string> checkpoint_names() const;

  // Binds host:port (0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

  VolumeStore& store() { return store_; }

 private:
  struct Loaded {
    std::string name;
    GanModel model;
    std::mutex mu;
    std::map<int64_t, DirectionSet> directions;
  };

  Loaded& checkpoint(const std::string& name);
  const DirectionSet& directions(Loaded& c, int64_t k);
  void routes();

  ServiceConfig cfg_;
  std::map<std::string, std::unique_ptr<Loaded>> ckpts_;
  VolumeStore store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace vgan

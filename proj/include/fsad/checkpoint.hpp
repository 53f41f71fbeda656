#pragma once

// Checkpoint archive: a text manifest followed by raw parameter data.
//
//   fsad-checkpoint 1
//   <key> <value>                         model configuration, one per line
//   param <group> <name> <d0,d1,..> <byte offset> <byte count>
//   sha256 <hex digest of the data section>
//   end
//   <little-endian float32 blobs in manifest order>

#include <filesystem>
#include <map>
#include <string>

#include "fsad/models.hpp"

namespace fsad {

struct Checkpoint {
    ModelConfig model;
    std::map<std::string, std::string> meta;  // free-form key/value entries (epoch, ...)
    ParameterSet<float> main;
    ParameterSet<float> disc;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fsad

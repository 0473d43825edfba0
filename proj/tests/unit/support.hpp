#pragma once

#include <filesystem>
#include <string>

#include "spfg/corpus.hpp"

namespace spfg::test {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("spfg_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline corpus::UtteranceRecord record(std::string id, std::string source, std::string target,
                                      corpus::CefrBand band = corpus::CefrBand::B1,
                                      std::string feedback = "Good job.",
                                      corpus::Split split = corpus::Split::Train) {
  corpus::UtteranceRecord r;
  r.id = std::move(id);
  r.source = std::move(source);
  r.target = std::move(target);
  r.cefr = band;
  r.feedback = std::move(feedback);
  r.split = split;
  return r;
}

}  // namespace spfg::test

#pragma once

#include <filesystem>
#include <string>

namespace gazekit::test {

// Fresh empty directory under the build tree's scratch area.
inline std::filesystem::path scratch(const std::string& name) {
    const std::filesystem::path dir = std::filesystem::path(GAZEKIT_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace gazekit::test

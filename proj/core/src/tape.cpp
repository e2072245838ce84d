#include "sodarec/tape.hpp"

#include <cstdio>

namespace sodarec {

namespace logging {

int& verbosity() {
  static int level = 0;
  return level;
}

void warn(const std::string& msg) {
  std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

void info(const std::string& msg) {
  if (verbosity() >= 1) {
    std::fprintf(stderr, "[info] %s\n", msg.c_str());
  }
}

void debug(const std::string& msg) {
  if (verbosity() >= 2) {
    std::fprintf(stderr, "[debug] %s\n", msg.c_str());
  }
}

}  // namespace logging

template class Tape<float>;
template class Tape<double>;

}  // namespace sodarec

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "stopsafe/util.hpp"

int main(int argc, char** argv) {
  // Warnings from simulated cohorts are expected; tests that care install
  // their own sink.
  stopsafe::log::set_sink([](const std::string&) {});
  return doctest::Context(argc, argv).run();
}

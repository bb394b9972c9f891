// Catch2 v3 amalgamated translation unit supplies main(); this TU exists so
// the static library has a project-owned source file.
#include <catch2/catch_amalgamated.hpp>

#pragma once

#include "cubedesign/balance.hpp"
#include "cubedesign/config.hpp"
#include "cubedesign/csv.hpp"
#include "cubedesign/cube.hpp"
#include "cubedesign/designs.hpp"
#include "cubedesign/error.hpp"
#include "cubedesign/estimators.hpp"
#include "cubedesign/inference.hpp"
#include "cubedesign/matrix.hpp"
#include "cubedesign/numerics.hpp"
#include "cubedesign/parallel.hpp"
#include "cubedesign/random.hpp"
#include "cubedesign/simulation.hpp"

#pragma once

#include "riskadj/breslow.hpp"
#include "riskadj/cox.hpp"
#include "riskadj/csv.hpp"
#include "riskadj/frailty.hpp"
#include "riskadj/imputation.hpp"
#include "riskadj/intervals.hpp"
#include "riskadj/io.hpp"
#include "riskadj/pipeline.hpp"
#include "riskadj/pooling.hpp"
#include "riskadj/predict.hpp"
#include "riskadj/rng.hpp"
#include "riskadj/simgen.hpp"
#include "riskadj/stats.hpp"
#include "riskadj/types.hpp"
#include "riskadj/variance.hpp"

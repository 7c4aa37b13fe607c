#pragma once

#include "inna/error.hpp"
#include "inna/rng.hpp"
#include "inna/parallel.hpp"
#include "inna/dataset.hpp"
#include "inna/elt.hpp"
#include "inna/logistic.hpp"
#include "inna/quasimode.hpp"
#include "inna/curvature.hpp"
#include "inna/inna_sampler.hpp"
#include "inna/exact_mcmc.hpp"
#include "inna/predictor.hpp"
#include "inna/synth.hpp"
#include "inna/report.hpp"
#include "inna/io.hpp"

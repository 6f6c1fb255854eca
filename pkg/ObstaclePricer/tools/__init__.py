# Subpackage for tools: run configs, writers and the price/converge/verify-measure commands

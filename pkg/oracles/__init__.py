"""
Test-support oracles: closed forms and independently seeded Monte-Carlo
estimates. Nothing here imports forklab.
"""

"""
Motor de registro deformable multimodalidad basado en información de gradiente
codificada espacialmente (SEGI)
"""

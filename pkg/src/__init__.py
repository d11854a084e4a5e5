"""
Laboratorio de Destilación de Trayectorias Rectas y Consistentes
"""

# Тесты для модуля seaice_workbench
